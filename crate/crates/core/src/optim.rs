//! SGD with momentum and weight decay.
//!
//! Update rule per parameter: v <- momentum * v + grad + weight_decay * value,
//! then value <- value - lr * v. Gradients are zeroed after the step.

use crate::tensor::ParamTensor;

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

pub fn sgd_step<'a, I>(params: I, lr: f32, config: SgdConfig)
where
    I: IntoIterator<Item = &'a mut ParamTensor>,
{
    for p in params {
        let n = p.value.numel();
        for i in 0..n {
            let g = p.grad.data()[i] + config.weight_decay * p.value.data()[i];
            let v = config.momentum * p.momentum_buffer.data()[i] + g;
            p.momentum_buffer.data_mut()[i] = v;
            p.value.data_mut()[i] -= lr * v;
        }
        p.zero_grad();
    }
}
