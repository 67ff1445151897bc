//! Dense tensor storage: contiguous f32 values in row-major order.

use crate::error::{Error, Result};

/// Dense N-dimensional array of 32-bit floats, row-major.
///
/// The shape is fixed at creation; `reshape` produces a new tensor with the
/// same number of elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("element count", n, data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Extent of axis `i`, or 1 for axes beyond the rank.
    pub fn dim(&self, i: usize) -> usize {
        self.shape.get(i).copied().unwrap_or(1)
    }

    /// New tensor with a different shape over the same values.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("element count", self.data.len(), n));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    /// Elementwise `self += other`. Shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "elementwise add",
                self.numel(),
                other.numel(),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Trainable tensor: value plus accumulated gradient and SGD momentum buffer,
/// all sharing one shape. The gradient is zero-filled after each optimizer step.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum_buffer: Tensor,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor) -> ParamTensor {
        let shape = value.shape().to_vec();
        ParamTensor {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            momentum_buffer: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Geometry of one convolution: channel counts, kernel extents, stride and
/// zero padding, each as (T, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Result<ConvSpec> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.out_channels == 0 {
            return Err(Error::Config("out_channels must be >= 1".into()));
        }
        let (kt, kh, kw) = self.kernel;
        if kt == 0 || kh == 0 || kw == 0 {
            return Err(Error::Config("kernel extents must be >= 1".into()));
        }
        let (st, sh, sw) = self.stride;
        if st == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config("stride extents must be >= 1".into()));
        }
        Ok(())
    }

    /// floor((in + 2p - k) / s) + 1 for one axis; errors when the padded input
    /// is smaller than the kernel.
    pub fn out_extent(in_extent: usize, k: usize, s: usize, p: usize) -> Result<usize> {
        let padded = in_extent + 2 * p;
        if padded < k {
            return Err(Error::Config(format!(
                "kernel extent {k} exceeds padded input extent {padded}"
            )));
        }
        Ok((padded - k) / s + 1)
    }

    /// Output (T, H, W) for an input of extents (T, H, W).
    pub fn output_extents(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        Ok((
            Self::out_extent(input.0, self.kernel.0, self.stride.0, self.padding.0)?,
            Self::out_extent(input.1, self.kernel.1, self.stride.1, self.padding.1)?,
            Self::out_extent(input.2, self.kernel.2, self.stride.2, self.padding.2)?,
        ))
    }

    /// Expected weight shape (out, in, kT, kH, kW).
    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
            self.kernel.2,
        ]
    }
}
