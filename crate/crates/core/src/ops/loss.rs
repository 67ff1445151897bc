//! Softmax and cross-entropy loss with the max-subtraction trick; reductions
//! accumulate in f64.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of an (N, K) tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape("logits rank", 2, logits.rank()));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut out = Tensor::zeros(&[n, k]);
    for ni in 0..n {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        let mut exps = vec![0.0f64; k];
        for (i, &v) in row.iter().enumerate() {
            let e = ((v - max) as f64).exp();
            exps[i] = e;
            sum += e;
        }
        for (o, e) in out.data_mut()[ni * k..(ni + 1) * k].iter_mut().zip(exps) {
            *o = (e / sum) as f32;
        }
    }
    Ok(out)
}

/// Mean over the batch of -log softmax(logits)[label]; also returns
/// grad_logits = (softmax - onehot) / N.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::shape("logits rank", 2, logits.rank()));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits in cross-entropy".into()));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Dataset(format!(
                "label {l} at row {i} out of range for {k} classes"
            )));
        }
    }

    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = 0.0f64;
    for ni in 0..n {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        let mut exps = vec![0.0f64; k];
        for (i, &v) in row.iter().enumerate() {
            let e = ((v - max) as f64).exp();
            exps[i] = e;
            sum += e;
        }
        let log_sum = sum.ln();
        let label = labels[ni];
        loss += log_sum - (row[label] - max) as f64;
        let g = &mut grad.data_mut()[ni * k..(ni + 1) * k];
        for (i, e) in exps.iter().enumerate() {
            let p = e / sum;
            let onehot = if i == label { 1.0 } else { 0.0 };
            g[i] = ((p - onehot) / n as f64) as f32;
        }
    }
    Ok(((loss / n as f64) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::filled(&[2, 101], 0.37);
        let (loss, _) = softmax_cross_entropy(&logits, &[5, 77]).unwrap();
        assert!((loss - (101.0f32).ln()).abs() < 1e-5, "loss {loss}");
        assert!((loss - 4.6151).abs() < 1e-3);
    }

    #[test]
    fn confident_correct_logit_gives_near_zero_loss() {
        let mut logits = Tensor::zeros(&[1, 10]);
        logits.data_mut()[3] = 1000.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let logits = Tensor::from_vec(
                &[3, 7],
                (0..21).map(|_| rng.random_range(-30.0f32..30.0)).collect(),
            )
            .unwrap();
            let p = softmax(&logits).unwrap();
            for ni in 0..3 {
                let row = &p.data()[ni * 7..(ni + 1) * 7];
                assert!(row.iter().all(|&v| v >= 0.0));
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_non_finite_logits() {
        let logits = Tensor::from_vec(&[1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
        let logits = Tensor::from_vec(&[1, 2], vec![f32::INFINITY, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let logits = Tensor::from_vec(
            &[2, 5],
            (0..10).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
        )
        .unwrap();
        let labels = [4usize, 1];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut l = logits.clone();
        for idx in 0..logits.numel() {
            let fd = reference::central_difference(l.data_mut(), idx, 1e-2, |vals| {
                let t = Tensor::from_vec(logits.shape(), vals.to_vec()).unwrap();
                softmax_cross_entropy(&t, &labels).unwrap().0 as f64
            });
            assert!(
                reference::relative_error(grad.data()[idx] as f64, fd) < 1e-3,
                "grad[{idx}] {} vs {fd}",
                grad.data()[idx]
            );
        }
    }
}
