//! Max pooling over T,H,W and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

/// Max pool over NCTHW input. Records the flat input index of each window
/// maximum for the backward pass; ties go to the first element in scan order.
pub fn max_pool3d_forward(
    input: &Tensor,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
) -> Result<(Tensor, Vec<u32>)> {
    if input.rank() != 5 {
        return Err(Error::shape("input rank", 5, input.rank()));
    }
    let (kt, kh, kw) = kernel;
    let (pt, ph, pw) = padding;
    if pt >= kt || ph >= kh || pw >= kw {
        return Err(Error::Config(
            "pool padding must be smaller than the kernel".into(),
        ));
    }
    let (n, c) = (input.dim(0), input.dim(1));
    let (t, h, w) = (input.dim(2), input.dim(3), input.dim(4));
    let ot = ConvSpec::out_extent(t, kt, stride.0, pt)?;
    let oh = ConvSpec::out_extent(h, kh, stride.1, ph)?;
    let ow = ConvSpec::out_extent(w, kw, stride.2, pw)?;

    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, ot, oh, ow]);
    let mut argmax = vec![0u32; out.numel()];
    let o = out.data_mut();

    let mut oi = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * t * h * w;
            for oti in 0..ot {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for kti in 0..kt {
                            let ti = (oti * stride.0 + kti) as isize - pt as isize;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            for khi in 0..kh {
                                let hi = (ohi * stride.1 + khi) as isize - ph as isize;
                                if hi < 0 || hi >= h as isize {
                                    continue;
                                }
                                for kwi in 0..kw {
                                    let wi = (owi * stride.2 + kwi) as isize - pw as isize;
                                    if wi < 0 || wi >= w as isize {
                                        continue;
                                    }
                                    let idx = base
                                        + (ti as usize * h + hi as usize) * w
                                        + wi as usize;
                                    if x[idx] > best {
                                        best = x[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        o[oi] = best;
                        argmax[oi] = best_idx as u32;
                        oi += 1;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool3d_backward(
    grad_out: &Tensor,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor> {
    if grad_out.numel() != argmax.len() {
        return Err(Error::shape("argmax entries", grad_out.numel(), argmax.len()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (go, &idx) in grad_out.data().iter().zip(argmax.iter()) {
        g[idx as usize] += go;
    }
    Ok(gx)
}

/// Mean over T,H,W: NCTHW -> (N, C). Accumulates in f64.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 5 {
        return Err(Error::shape("input rank", 5, input.rank()));
    }
    let (n, c) = (input.dim(0), input.dim(1));
    let spatial = input.dim(2) * input.dim(3) * input.dim(4);
    if spatial == 0 {
        return Err(Error::Numeric("global average pool over empty volume".into()));
    }
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c]);
    let o = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * spatial;
            let mut acc = 0.0f64;
            for &v in &x[base..base + spatial] {
                acc += v as f64;
            }
            o[ni * c + ci] = (acc / spatial as f64) as f32;
        }
    }
    Ok(out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (n, c) = (grad_out.dim(0), grad_out.dim(1));
    if input_shape.len() != 5 || input_shape[0] != n || input_shape[1] != c {
        return Err(Error::shape("input channels", c, input_shape.get(1).copied().unwrap_or(0)));
    }
    let spatial: usize = input_shape[2..].iter().product();
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let v = grad_out.data()[ni * c + ci] / spatial as f32;
            let base = (ni * c + ci) * spatial;
            g[base..base + spatial].fill(v);
        }
    }
    Ok(gx)
}
