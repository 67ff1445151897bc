use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or layer was given data whose extents do not match its contract.
    /// Names the offending axis so shape bugs are diagnosable from the message.
    #[error("shape mismatch on {axis}: expected {expected}, got {got}{context}")]
    Shape {
        axis: &'static str,
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("video too short: {got} frames, need at least {required} for {what}")]
    TooShort {
        got: usize,
        required: usize,
        what: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(
        "training aborted: non-finite loss at epoch {epoch}, batch {batch} (last lr {lr})"
    )]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f32 },
}

impl Error {
    pub fn shape(axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            axis,
            expected,
            got,
            context: String::new(),
        }
    }

    pub fn shape_in(axis: &'static str, expected: usize, got: usize, context: &str) -> Self {
        Error::Shape {
            axis,
            expected,
            got,
            context: format!(" in {context}"),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
