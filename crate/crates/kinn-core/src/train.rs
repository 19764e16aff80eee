//! Training loop for the operator model on Poisson data: minibatch
//! relative-L2 loss on normalized fields, Adam with a halving schedule,
//! per-epoch CSV metric logs on denormalized fields, and best-val
//! checkpoint tracking.
//!
//! Determinism contract: all randomness derives from named ChaCha streams of
//! the config seed; batch members are processed in parallel but their
//! gradients are reduced in index order, so the metric log and final
//! parameters are bit-identical across runs and thread counts.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, relative_l2_loss, Metrics};
use crate::model::{operator_backward, operator_forward, OperatorConfig, OperatorParams};
use crate::optim::{adam_step, scheduled_lr, AdamConfig, AdamState, StepOutcome};
use crate::params::Params;
use crate::poisson::{stream_rng, streams, NormStats, PoissonDataset, SplitData};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Halve the learning rate every this many epochs (0 = constant).
    pub halve_every: usize,
    pub seed: u64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_divergence() -> f64 {
    1e3
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            lr: 1e-3,
            halve_every: 25,
            seed,
            divergence_threshold: 1e3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub metrics: Metrics,
    pub loss: f64,
    pub lr: f64,
    pub wall_s: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,split,rmse,nrmse,max_err,loss,lr,wall_s";

pub fn epoch_csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.3}",
        r.epoch, r.split, r.metrics.rmse, r.metrics.nrmse, r.metrics.max_err, r.loss, r.lr, r.wall_s
    )
}

pub fn metrics_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&epoch_csv_row(r));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainResult<T> {
    pub params: OperatorParams<T>,
    pub best_params: OperatorParams<T>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub log: Vec<EpochRecord>,
    pub rejected_steps: usize,
}

/// One field sample as a `[1, H, W, C]` view for per-sample passes.
fn sample_view<T: Scalar>(split_f: &Tensor<T>, idx: usize, n: usize) -> Tensor<T> {
    let per = n * n;
    Tensor::from_vec(&[1, n, n, 1], split_f.data()[idx * per..(idx + 1) * per].to_vec())
        .expect("sample slice")
}

/// Forward a whole split (no gradients); returns stacked predictions
/// `[count, n, n]` in normalized space.
pub fn predict_split<T: Scalar>(
    params: &OperatorParams<T>,
    cfg: &OperatorConfig,
    split: &SplitData,
    n: usize,
) -> Result<Tensor<T>> {
    let split_f: Tensor<T> = split.f.cast();
    let count = split.count();
    let preds: Vec<Result<Vec<T>>> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let x = sample_view(&split_f, idx, n);
            let (pred, _) = operator_forward(params, cfg, &x)?;
            Ok(pred.data().to_vec())
        })
        .collect();
    let mut out = Tensor::zeros(&[count, n, n]);
    for (idx, p) in preds.into_iter().enumerate() {
        out.data_mut()[idx * n * n..(idx + 1) * n * n].copy_from_slice(&p?);
    }
    Ok(out)
}

/// Loss on normalized fields plus metrics on denormalized fields.
pub fn evaluate_split<T: Scalar>(
    params: &OperatorParams<T>,
    cfg: &OperatorConfig,
    split: &SplitData,
    stats: &NormStats,
    n: usize,
) -> Result<(Metrics, f64)> {
    let preds = predict_split(params, cfg, split, n)?;
    let truth: Tensor<T> = split.u.cast();
    let (loss, _) = relative_l2_loss(&preds, &truth)?;
    let metrics = compute_metrics(
        &stats.denormalize_u_tensor(&preds),
        &stats.denormalize_u_tensor(&truth),
    )?;
    Ok((metrics, loss.as_f64()))
}

/// Full training run. `on_epoch` fires after each epoch with the train and
/// val records just appended to the log.
pub fn train_operator<T: Scalar>(
    op_cfg: &OperatorConfig,
    train_cfg: &TrainConfig,
    dataset: &PoissonDataset,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord, &EpochRecord)>,
) -> Result<TrainResult<T>> {
    op_cfg.validate()?;
    let n = dataset.train.f.shape()[1];
    let count = dataset.train.count();
    let stats = dataset.stats;

    let train_f: Tensor<T> = dataset.train.f.cast();
    let train_u: Tensor<T> = dataset.train.u.cast();
    let per = n * n;

    let mut params =
        OperatorParams::<T>::init(&mut stream_rng(train_cfg.seed, streams::INIT), op_cfg)?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::default();

    let mut log = Vec::with_capacity(train_cfg.epochs * 2);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_val = Metrics { rmse: f64::INFINITY, nrmse: f64::INFINITY, max_err: f64::INFINITY, skipped: 0 };
    let mut rejected_steps = 0usize;
    let run_start = Instant::now();

    for epoch in 0..train_cfg.epochs {
        let lr = scheduled_lr(train_cfg.lr, epoch, train_cfg.halve_every);

        // deterministic shuffle from a per-epoch stream
        let mut order: Vec<usize> = (0..count).collect();
        let mut rng = stream_rng(train_cfg.seed, streams::SHUFFLE + epoch as u64);
        for i in (1..count).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        let mut train_preds = Tensor::<T>::zeros(&[count, n, n]);
        let mut train_truth = Tensor::<T>::zeros(&[count, n, n]);

        for batch in order.chunks(train_cfg.batch_size) {
            // shared-nothing per-sample passes, reduced in index order
            let results: Vec<Result<(f64, OperatorParams<T>, Vec<T>)>> = batch
                .par_iter()
                .map(|&idx| {
                    let x = sample_view(&train_f, idx, n);
                    let target =
                        Tensor::from_vec(&[1, n, n, 1], train_u.data()[idx * per..(idx + 1) * per].to_vec())?;
                    let (pred, cache) = operator_forward(&params, op_cfg, &x)?;
                    let (loss, grad_pred) = relative_l2_loss(&pred, &target)?;
                    let (grads, _) = operator_backward(&params, op_cfg, &x, &cache, &grad_pred)?;
                    Ok((loss.as_f64(), grads, pred.data().to_vec()))
                })
                .collect();

            let mut batch_grads: Option<OperatorParams<T>> = None;
            let mut batch_loss = 0.0f64;
            for (slot, res) in batch.iter().zip(results) {
                let (loss, grads, pred) = res?;
                batch_loss += loss;
                match &mut batch_grads {
                    Some(acc) => acc.add_scaled_params(&grads, T::one()),
                    None => batch_grads = Some(grads),
                }
                train_preds.data_mut()[slot * per..(slot + 1) * per].copy_from_slice(&pred);
                train_truth.data_mut()[slot * per..(slot + 1) * per]
                    .copy_from_slice(&train_u.data()[slot * per..(slot + 1) * per]);
            }
            batch_loss /= batch.len() as f64;
            let mut grads = batch_grads.expect("non-empty batch");
            grads.scale_params(T::from_f64(1.0 / batch.len() as f64));

            if batch_loss > train_cfg.divergence_threshold {
                return Err(Error::Divergence { epoch, loss: batch_loss });
            }
            if adam_step(&mut params, &grads, &mut adam, lr, &adam_cfg)
                == StepOutcome::RejectedNonFinite
            {
                rejected_steps += 1;
            }
            epoch_loss += batch_loss;
            batches += 1;
        }
        epoch_loss /= batches as f64;

        let train_metrics = compute_metrics(
            &stats.denormalize_u_tensor(&train_preds),
            &stats.denormalize_u_tensor(&train_truth),
        )?;
        let (val_metrics, val_loss) = evaluate_split(&params, op_cfg, &dataset.val, &stats, n)?;

        let wall = run_start.elapsed().as_secs_f64();
        let train_rec = EpochRecord {
            epoch,
            split: "train",
            metrics: train_metrics,
            loss: epoch_loss,
            lr,
            wall_s: wall,
        };
        let val_rec = EpochRecord {
            epoch,
            split: "val",
            metrics: val_metrics,
            loss: val_loss,
            lr,
            wall_s: wall,
        };
        if val_metrics.nrmse < best_val.nrmse {
            best_val = val_metrics;
            best_epoch = epoch;
            best_params = params.clone();
        }
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&train_rec, &val_rec);
        }
        log.push(train_rec);
        log.push(val_rec);
    }

    Ok(TrainResult { params, best_params, best_epoch, best_val, log, rejected_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckb::{Aggregation, CkbConfig};
    use crate::poisson::{generate_dataset, PoissonConfig};

    fn tiny_setup() -> (OperatorConfig, TrainConfig, PoissonDataset) {
        let mut pcfg = PoissonConfig::desk(3);
        pcfg.grid = 8;
        pcfg.k = 2;
        pcfg.k_ood = 3;
        pcfg.n_train = 8;
        pcfg.n_val = 4;
        pcfg.n_test_id = 4;
        pcfg.n_test_ood = 4;
        let ds = generate_dataset(&pcfg).unwrap();
        let block = CkbConfig {
            d: 6,
            expansion: 1,
            state_size: 2,
            cascade_depth: 1,
            conv_kernel: 3,
            directions: 1,
            use_mlp: false,
            aggregation: Aggregation::DenseSum,
        };
        let op = OperatorConfig::uniform(1, 1, 6, 1, block);
        let tr = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 1e-3,
            halve_every: 2,
            seed: 7,
            divergence_threshold: 1e3,
        };
        (op, tr, ds)
    }

    #[test]
    fn zero_lr_keeps_metrics_constant() {
        let (op, mut tr, ds) = tiny_setup();
        tr.lr = 0.0;
        let result = train_operator::<f64>(&op, &tr, &ds, None).unwrap();
        let val_rows: Vec<_> = result.log.iter().filter(|r| r.split == "val").collect();
        for w in val_rows.windows(2) {
            assert_eq!(w[0].metrics.nrmse, w[1].metrics.nrmse);
            assert_eq!(w[0].loss, w[1].loss);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (op, tr, ds) = tiny_setup();
        let a = train_operator::<f64>(&op, &tr, &ds, None).unwrap();
        let b = train_operator::<f64>(&op, &tr, &ds, None).unwrap();
        assert_eq!(a.params.to_tree().to_bytes(), b.params.to_tree().to_bytes());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.metrics, rb.metrics);
            assert_eq!(ra.loss, rb.loss);
        }
    }

    #[test]
    fn checkpoint_reload_reproduces_val_metrics() {
        let (op, tr, ds) = tiny_setup();
        let n = ds.train.f.shape()[1];
        let result = train_operator::<f64>(&op, &tr, &ds, None).unwrap();
        let tree = result.best_params.to_tree();
        let bytes = tree.to_bytes();
        let back = crate::params::ParamTree::<f64>::from_bytes(&bytes).unwrap();
        let mut restored =
            OperatorParams::<f64>::init(&mut stream_rng(99, 0), &op).unwrap();
        restored.load_tree(&back).unwrap();
        let (m1, l1) = evaluate_split(&result.best_params, &op, &ds.val, &ds.stats, n).unwrap();
        let (m2, l2) = evaluate_split(&restored, &op, &ds.val, &ds.stats, n).unwrap();
        assert_eq!(m1, m2);
        assert!((l1 - l2).abs() < 1e-12);
        assert!((m1.nrmse - result.best_val.nrmse).abs() < 1e-12);
    }

    #[test]
    fn divergence_aborts_with_diagnostic() {
        let (op, mut tr, ds) = tiny_setup();
        tr.divergence_threshold = 1e-9; // first batch always exceeds this
        match train_operator::<f64>(&op, &tr, &ds, None) {
            Err(Error::Divergence { epoch: 0, .. }) => {}
            other => panic!("expected divergence abort, got {other:?}"),
        }
    }
}
