//! Numerical layers: forward and backward kernels over [`crate::tensor::Tensor`].

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{relu_backward, relu_forward};
pub use conv::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, spec2d,
};
pub use dense::{linear_backward, linear_forward};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{batchnorm_backward, batchnorm_forward, BnMode, BnSaved, BN_EPSILON, BN_MOMENTUM};
pub use pool::{
    global_avg_pool_backward, global_avg_pool_forward, max_pool3d_backward, max_pool3d_forward,
};
