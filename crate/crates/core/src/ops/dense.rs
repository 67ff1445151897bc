//! Fully connected layer: y = x W^T + b with weight (out, in).

use crate::error::{Error, Result};
use crate::gemm::{axpy, gemm, gemm_abt};
use crate::tensor::Tensor;

pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::shape("input rank", 2, input.rank()));
    }
    let (n, f) = (input.dim(0), input.dim(1));
    let (o, fw) = (weight.dim(0), weight.dim(1));
    if fw != f {
        return Err(Error::shape_in("input features", fw, f, "linear"));
    }
    if bias.numel() != o {
        return Err(Error::shape_in("bias features", o, bias.numel(), "linear"));
    }
    let mut out = Tensor::zeros(&[n, o]);
    {
        let od = out.data_mut();
        for ni in 0..n {
            od[ni * o..(ni + 1) * o].copy_from_slice(bias.data());
        }
        gemm_abt(input.data(), f, weight.data(), f, od, o, n, o, f);
    }
    Ok(out)
}

/// Returns (grad_input, grad_weight, grad_bias).
pub fn linear_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f) = (saved_input.dim(0), saved_input.dim(1));
    let o = weight.dim(0);
    if grad_out.shape() != [n, o] {
        return Err(Error::shape("grad_out features", o, grad_out.dim(1)));
    }
    let mut gx = Tensor::zeros(&[n, f]);
    gemm(grad_out.data(), o, weight.data(), f, gx.data_mut(), f, n, o, f);

    let mut gw = Tensor::zeros(&[o, f]);
    {
        let gwd = gw.data_mut();
        for ni in 0..n {
            let x_row = &saved_input.data()[ni * f..(ni + 1) * f];
            for oi in 0..o {
                let g = grad_out.data()[ni * o + oi];
                if g != 0.0 {
                    axpy(&mut gwd[oi * f..(oi + 1) * f], g, x_row);
                }
            }
        }
    }
    let mut gb = Tensor::zeros(&[o]);
    {
        let gbd = gb.data_mut();
        for ni in 0..n {
            for oi in 0..o {
                gbd[oi] += grad_out.data()[ni * o + oi];
            }
        }
    }
    Ok((gx, gw, gb))
}
