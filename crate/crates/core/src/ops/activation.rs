//! ReLU.

use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient gated by the sign of the saved input (zero passes nothing).
pub fn relu_backward(grad_out: &Tensor, saved_input: &Tensor) -> Tensor {
    let mut gx = grad_out.clone();
    for (g, x) in gx.data_mut().iter_mut().zip(saved_input.data().iter()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}
