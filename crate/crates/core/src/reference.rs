//! Straight-line reference implementations used to cross-check the optimized
//! kernels. Nothing here shares code with the production paths: the
//! convolution below is the plain seven-nested-loop definition, kept
//! deliberately slow and obvious.

use crate::error::Result;
use crate::tensor::{ConvSpec, Tensor};

/// Direct cross-correlation: for every output element, walk the kernel and
/// accumulate `input * weight`, then add the bias. Input is NCTHW, weight is
/// (out, in, kT, kH, kW).
pub fn conv3d_direct(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (n, cin) = (input.dim(0), input.dim(1));
    let (t, h, w) = (input.dim(2), input.dim(3), input.dim(4));
    let (ot, oh, ow) = spec.output_extents((t, h, w))?;
    let cout = spec.out_channels;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[n, cout, ot, oh, ow]);
    let o = out.data_mut();

    for ni in 0..n {
        for co in 0..cout {
            for oti in 0..ot {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut acc = 0.0f32;
                        for ci in 0..cin {
                            for kti in 0..kt {
                                let ti = (oti * st + kti) as isize - pt as isize;
                                if ti < 0 || ti >= t as isize {
                                    continue;
                                }
                                for khi in 0..kh {
                                    let hi = (ohi * sh + khi) as isize - ph as isize;
                                    if hi < 0 || hi >= h as isize {
                                        continue;
                                    }
                                    for kwi in 0..kw {
                                        let wi = (owi * sw + kwi) as isize - pw as isize;
                                        if wi < 0 || wi >= w as isize {
                                            continue;
                                        }
                                        let xi = (((ni * cin + ci) * t + ti as usize) * h
                                            + hi as usize)
                                            * w
                                            + wi as usize;
                                        let wx = (((co * cin + ci) * kt + kti) * kh + khi) * kw
                                            + kwi;
                                        acc += x[xi] * wt[wx];
                                    }
                                }
                            }
                        }
                        let oi = (((ni * cout + co) * ot + oti) * oh + ohi) * ow + owi;
                        o[oi] = acc + b[co];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Central finite difference of `f` with respect to one slot of `values`.
pub fn central_difference<F>(values: &mut [f32], idx: usize, h: f32, mut f: F) -> f64
where
    F: FnMut(&[f32]) -> f64,
{
    let orig = values[idx];
    values[idx] = orig + h;
    let plus = f(values);
    values[idx] = orig - h;
    let minus = f(values);
    values[idx] = orig;
    (plus - minus) / (2.0 * h as f64)
}

/// Relative error with a floor on the denominator so near-zero pairs compare
/// by absolute difference against the floor.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-2)
}
