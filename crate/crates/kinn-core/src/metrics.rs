//! Error metrics and the relative-L2 training loss.
//!
//! Samples are stacked along axis 0; nRMSE is the mean per-sample relative
//! L2 error, RMSE is over all entries, max error over all points and
//! samples. Metrics are meant to be computed on denormalized fields.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub nrmse: f64,
    pub max_err: f64,
    /// Samples excluded from nrmse because the reference had zero norm.
    pub skipped: usize,
}

fn sample_layout<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<(usize, usize)> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "metric shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.shape().is_empty() || pred.is_empty() {
        return Err(Error::Shape("metrics need at least one sample".into()));
    }
    let count = pred.shape()[0];
    Ok((count, pred.len() / count))
}

pub fn compute_metrics<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Metrics> {
    let (count, per) = sample_layout(pred, truth)?;
    let mut sq_sum = 0.0f64;
    let mut max_err = 0.0f64;
    let mut nrmse_sum = 0.0f64;
    let mut included = 0usize;
    for s in 0..count {
        let p = &pred.data()[s * per..(s + 1) * per];
        let t = &truth.data()[s * per..(s + 1) * per];
        let mut diff_sq = 0.0;
        let mut ref_sq = 0.0;
        for (pv, tv) in p.iter().zip(t) {
            let d = pv.as_f64() - tv.as_f64();
            diff_sq += d * d;
            ref_sq += tv.as_f64() * tv.as_f64();
            max_err = max_err.max(d.abs());
        }
        sq_sum += diff_sq;
        if ref_sq > 0.0 {
            nrmse_sum += (diff_sq / ref_sq).sqrt();
            included += 1;
        }
    }
    let nrmse = if included > 0 { nrmse_sum / included as f64 } else { 0.0 };
    Ok(Metrics {
        rmse: (sq_sum / (count * per) as f64).sqrt(),
        nrmse,
        max_err,
        skipped: count - included,
    })
}

/// `100 * mean_s ||pred_s - true_s||_1 / ||true_s||_1`, zero-norm samples
/// excluded.
pub fn rel_l1_percent<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    let (count, per) = sample_layout(pred, truth)?;
    let mut acc = 0.0;
    let mut included = 0usize;
    for s in 0..count {
        let p = &pred.data()[s * per..(s + 1) * per];
        let t = &truth.data()[s * per..(s + 1) * per];
        let diff: f64 = p.iter().zip(t).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
        let norm: f64 = t.iter().map(|v| v.as_f64().abs()).sum();
        if norm > 0.0 {
            acc += diff / norm;
            included += 1;
        }
    }
    Ok(if included > 0 { 100.0 * acc / included as f64 } else { 0.0 })
}

/// Mean over samples of `||pred_s - true_s||_2 / ||true_s||_2` with its
/// gradient w.r.t. the prediction. Zero-norm references are skipped; a
/// perfect prediction contributes zero loss and zero gradient.
pub fn relative_l2_loss<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (count, per) = sample_layout(pred, truth)?;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = T::zero();
    let mut included = 0usize;
    for s in 0..count {
        let p = &pred.data()[s * per..(s + 1) * per];
        let t = &truth.data()[s * per..(s + 1) * per];
        let mut diff_sq = T::zero();
        let mut ref_sq = T::zero();
        for (pv, tv) in p.iter().zip(t) {
            let d = *pv - *tv;
            diff_sq += d * d;
            ref_sq += *tv * *tv;
        }
        if ref_sq > T::zero() {
            included += 1;
            let diff_norm = diff_sq.sqrt();
            let ref_norm = ref_sq.sqrt();
            loss += diff_norm / ref_norm;
            if diff_norm > T::zero() {
                let scale = T::one() / (diff_norm * ref_norm);
                let g = &mut grad.data_mut()[s * per..(s + 1) * per];
                for ((gv, pv), tv) in g.iter_mut().zip(p).zip(t) {
                    *gv = (*pv - *tv) * scale;
                }
            }
        }
    }
    if included == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_f64(included as f64);
    grad.scale(inv);
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_gradient_check, FD_EPS};
    use crate::poisson::stream_rng;

    #[test]
    fn perfect_prediction_is_all_zero() {
        let x: Tensor<f64> = Tensor::uniform(&mut stream_rng(0, 0), &[3, 5, 5], -1.0, 1.0);
        let m = compute_metrics(&x, &x).unwrap();
        assert_eq!((m.rmse, m.nrmse, m.max_err), (0.0, 0.0, 0.0));
        let (loss, grad) = relative_l2_loss(&x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn proportional_error_gives_exact_nrmse() {
        let t: Tensor<f64> = Tensor::uniform(&mut stream_rng(1, 0), &[4, 6], -1.0, 1.0);
        let p = t.map(|v| v * 1.01);
        let m = compute_metrics(&p, &t).unwrap();
        assert!((m.nrmse - 0.01).abs() < 1e-12, "nrmse {}", m.nrmse);
    }

    #[test]
    fn constant_offset_closed_form() {
        // pred - true = c: nrmse = c * sqrt(n) / ||t||
        let n = 16usize;
        let t: Tensor<f64> = Tensor::uniform(&mut stream_rng(2, 0), &[1, n], 0.5, 1.5);
        let c = 0.25;
        let p = t.map(|v| v + c);
        let m = compute_metrics(&p, &t).unwrap();
        let t_norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let expect = c * (n as f64).sqrt() / t_norm;
        assert!((m.nrmse - expect).abs() < 1e-12);
        assert!((m.max_err - c).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_sample_is_skipped() {
        let mut t: Tensor<f64> = Tensor::uniform(&mut stream_rng(3, 0), &[2, 4], -1.0, 1.0);
        t.data_mut()[4..8].fill(0.0);
        let p = t.map(|v| v + 0.1);
        let m = compute_metrics(&p, &t).unwrap();
        assert_eq!(m.skipped, 1);
        let (_, grad) = relative_l2_loss(&p, &t).unwrap();
        assert!(grad.data()[4..8].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_of_identical_samples_matches_single() {
        let t1: Tensor<f64> = Tensor::uniform(&mut stream_rng(4, 0), &[1, 8], -1.0, 1.0);
        let p1 = Tensor::uniform(&mut stream_rng(4, 1), &[1, 8], -1.0, 1.0);
        let mut t2 = Tensor::zeros(&[2, 8]);
        let mut p2 = Tensor::zeros(&[2, 8]);
        for half in 0..2 {
            t2.data_mut()[half * 8..(half + 1) * 8].copy_from_slice(t1.data());
            p2.data_mut()[half * 8..(half + 1) * 8].copy_from_slice(p1.data());
        }
        let (l1, _) = relative_l2_loss(&p1, &t1).unwrap();
        let (l2, _) = relative_l2_loss(&p2, &t2).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
    }

    #[test]
    fn nrmse_is_scale_equivariant() {
        let t: Tensor<f64> = Tensor::uniform(&mut stream_rng(5, 0), &[3, 7], 0.5, 1.5);
        let p = Tensor::uniform(&mut stream_rng(5, 1), &[3, 7], 0.5, 1.5);
        let m1 = compute_metrics(&p, &t).unwrap();
        let c = 37.5;
        let m2 = compute_metrics(&p.map(|v| c * v), &t.map(|v| c * v)).unwrap();
        assert!((m1.nrmse - m2.nrmse).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_passes_fd() {
        let t: Tensor<f64> = Tensor::uniform(&mut stream_rng(6, 0), &[3, 10], -1.0, 1.0);
        let p = Tensor::uniform(&mut stream_rng(6, 1), &[3, 10], -1.0, 1.0);
        let (_, grad) = relative_l2_loss(&p, &t).unwrap();
        let report =
            fd_gradient_check(&p, &grad, FD_EPS, |p| relative_l2_loss(p, &t).unwrap().0);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
