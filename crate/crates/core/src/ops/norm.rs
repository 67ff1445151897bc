//! Batch normalization over the channel axis (axis 1) of an N,C,... tensor.
//!
//! Train mode normalizes by batch statistics over every non-channel axis and
//! updates the running estimates with momentum 0.1; eval mode applies the
//! running estimates. Statistics accumulate in f64.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// State captured by the forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub struct BnSaved {
    /// Normalized input (before gamma/beta).
    pub xhat: Tensor,
    /// 1 / sqrt(var + eps) per channel, for the statistics actually used.
    pub inv_std: Vec<f64>,
    /// Elements per channel in this batch.
    pub count: usize,
    /// Whether batch statistics (train) or running statistics (eval) were used.
    pub train: bool,
}

fn channel_layout(input: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() < 2 {
        return Err(Error::shape("input rank", 2, input.rank()));
    }
    let n = input.dim(0);
    let c = input.dim(1);
    let spatial: usize = (2..input.rank()).map(|i| input.dim(i)).product();
    if n * spatial == 0 {
        return Err(Error::Numeric("batchnorm over zero-size batch".into()));
    }
    Ok((n, c, spatial))
}

pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    mode: BnMode,
) -> Result<(Tensor, BnSaved)> {
    let (n, c, spatial) = channel_layout(input)?;
    if gamma.numel() != c {
        return Err(Error::shape("gamma channels", c, gamma.numel()));
    }
    if beta.numel() != c {
        return Err(Error::shape("beta channels", c, beta.numel()));
    }
    let x = input.data();
    let count = n * spatial;

    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    match mode {
        BnMode::Train => {
            for ci in 0..c {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for ni in 0..n {
                    let block = &x[(ni * c + ci) * spatial..(ni * c + ci + 1) * spatial];
                    for &v in block {
                        let v = v as f64;
                        sum += v;
                        sq += v * v;
                    }
                }
                let m = sum / count as f64;
                mean[ci] = m;
                var[ci] = (sq / count as f64 - m * m).max(0.0);
            }
            // Running variance keeps the unbiased estimate.
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for ci in 0..c {
                let rm = running_mean.data_mut();
                rm[ci] = ((1.0 - BN_MOMENTUM) * rm[ci] as f64 + BN_MOMENTUM * mean[ci]) as f32;
                let rv = running_var.data_mut();
                rv[ci] = ((1.0 - BN_MOMENTUM) * rv[ci] as f64
                    + BN_MOMENTUM * var[ci] * unbias) as f32;
            }
        }
        BnMode::Eval => {
            for ci in 0..c {
                mean[ci] = running_mean.data()[ci] as f64;
                var[ci] = running_var.data()[ci] as f64;
            }
        }
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    {
        let xh = xhat.data_mut();
        let o = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let g = gamma.data()[ci] as f64;
                let b = beta.data()[ci] as f64;
                let m = mean[ci];
                let is = inv_std[ci];
                let base = (ni * c + ci) * spatial;
                for i in base..base + spatial {
                    let h = (x[i] as f64 - m) * is;
                    xh[i] = h as f32;
                    o[i] = (g * h + b) as f32;
                }
            }
        }
    }
    Ok((
        out,
        BnSaved {
            xhat,
            inv_std,
            count,
            train: mode == BnMode::Train,
        },
    ))
}

/// Returns (grad_input, grad_gamma, grad_beta).
pub fn batchnorm_backward(
    grad_out: &Tensor,
    saved: &BnSaved,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, spatial) = channel_layout(grad_out)?;
    if grad_out.shape() != saved.xhat.shape() {
        return Err(Error::shape(
            "grad_out elements",
            saved.xhat.numel(),
            grad_out.numel(),
        ));
    }
    let go = grad_out.data();
    let xh = saved.xhat.data();
    let m = saved.count as f64;

    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    let mut grad_input = Tensor::zeros(grad_out.shape());

    for ci in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * spatial;
            for i in base..base + spatial {
                let dy = go[i] as f64;
                sum_dy += dy;
                sum_dy_xhat += dy * xh[i] as f64;
            }
        }
        grad_gamma.data_mut()[ci] = sum_dy_xhat as f32;
        grad_beta.data_mut()[ci] = sum_dy as f32;

        let g = gamma.data()[ci] as f64;
        let is = saved.inv_std[ci];
        let gi = grad_input.data_mut();
        if saved.train {
            let mean_dy = sum_dy / m;
            let mean_dy_xhat = sum_dy_xhat / m;
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for i in base..base + spatial {
                    let dy = go[i] as f64;
                    gi[i] = (g * is * (dy - mean_dy - xh[i] as f64 * mean_dy_xhat)) as f32;
                }
            }
        } else {
            // Eval statistics are constants: the map is affine per channel.
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for i in base..base + spatial {
                    gi[i] = (go[i] as f64 * g * is) as f32;
                }
            }
        }
    }
    Ok((grad_input, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .unwrap()
    }

    #[test]
    fn train_mode_standardizes_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&mut rng, &[4, 3, 2, 5, 5]);
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::filled(&[3], 1.0);
        let (out, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Train).unwrap();

        let (n, c, spatial) = (4, 3, 2 * 5 * 5);
        for ci in 0..c {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for &v in &out.data()[base..base + spatial] {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
            }
            let count = (n * spatial) as f64;
            let mean = sum / count;
            let var = sq / count - mean * mean;
            assert!(mean.abs() < 1e-5, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ci} var {var}");
        }
    }

    #[test]
    fn eval_identity_on_standardized_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, &[2, 2, 3, 4, 4]);
        let gamma = Tensor::filled(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let mut rm = Tensor::zeros(&[2]);
        let mut rv = Tensor::filled(&[2], 1.0);
        let (out, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Eval).unwrap();
        for (a, b) in out.data().iter().zip(x.data().iter()) {
            // eps shifts the scale by sqrt(1 + 1e-5).
            assert!((a - b).abs() < 1e-5 + b.abs() * 1e-4);
        }
    }

    #[test]
    fn eval_mode_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&mut rng, &[2, 3, 4, 4]);
        let gamma = random_tensor(&mut rng, &[3]);
        let beta = random_tensor(&mut rng, &[3]);
        let rm0 = random_tensor(&mut rng, &[3]);
        let rv0 = Tensor::filled(&[3], 0.7);
        let mut rm = rm0.clone();
        let mut rv = rv0.clone();
        let (a, _) = batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Eval).unwrap();
        let (b, _) = batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(rm.data(), rm0.data());
        assert_eq!(rv.data(), rv0.data());
    }

    #[test]
    fn rejects_zero_size_batch() {
        let x = Tensor::zeros(&[0, 3, 2, 2]);
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::filled(&[3], 1.0);
        assert!(batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Train).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&mut rng, &[3, 2, 4]);
        let gamma = random_tensor(&mut rng, &[2]);
        let beta = random_tensor(&mut rng, &[2]);
        let probe = random_tensor(&mut rng, &[3, 2, 4]);

        let loss = |x: &Tensor, g: &Tensor, b: &Tensor| -> f64 {
            let mut rm = Tensor::zeros(&[2]);
            let mut rv = Tensor::filled(&[2], 1.0);
            let (out, _) =
                batchnorm_forward(x, g, b, &mut rm, &mut rv, BnMode::Train).unwrap();
            out.data()
                .iter()
                .zip(probe.data().iter())
                .map(|(o, p)| *o as f64 * *p as f64)
                .sum()
        };

        let mut rm = Tensor::zeros(&[2]);
        let mut rv = Tensor::filled(&[2], 1.0);
        let (_, saved) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Train).unwrap();
        let (gx, gg, gb) = batchnorm_backward(&probe, &saved, &gamma).unwrap();

        let h = 1e-2;
        let mut xm = x.clone();
        for idx in 0..x.numel() {
            let fd = reference::central_difference(xm.data_mut(), idx, h, |vals| {
                loss(&Tensor::from_vec(x.shape(), vals.to_vec()).unwrap(), &gamma, &beta)
            });
            let err = reference::relative_error(gx.data()[idx] as f64, fd);
            assert!(err < 1e-3, "grad_input[{idx}]: {} vs {fd}", gx.data()[idx]);
        }
        let mut gm = gamma.clone();
        for idx in 0..gamma.numel() {
            let fd = reference::central_difference(gm.data_mut(), idx, h, |vals| {
                loss(&x, &Tensor::from_vec(gamma.shape(), vals.to_vec()).unwrap(), &beta)
            });
            let err = reference::relative_error(gg.data()[idx] as f64, fd);
            assert!(err < 1e-3);
        }
        let mut bm = beta.clone();
        for idx in 0..beta.numel() {
            let fd = reference::central_difference(bm.data_mut(), idx, h, |vals| {
                loss(&x, &gamma, &Tensor::from_vec(beta.shape(), vals.to_vec()).unwrap())
            });
            let err = reference::relative_error(gb.data()[idx] as f64, fd);
            assert!(err < 1e-3);
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor::from_vec(&[2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::filled(&[1], 1.0);
        batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, BnMode::Train).unwrap();
        // batch mean 4, biased var 5, unbiased var 5 * 4/3.
        assert!((rm.data()[0] - 0.4).abs() < 1e-6);
        assert!((rv.data()[0] - (0.9 + 0.1 * 5.0 * 4.0 / 3.0) as f32).abs() < 1e-5);
    }
}
