//! Cascade-depth and scan-direction ablation drivers: train one model per
//! variant with a shared seed, score on the out-of-distribution split, and
//! emit a CSV table (depth/direction, parameter count, relative L1 %, nRMSE,
//! max error, wall time).

use std::time::Instant;

use crate::error::Result;
use crate::metrics::{compute_metrics, rel_l1_percent};
use crate::model::OperatorConfig;
use crate::params::Params;
use crate::poisson::PoissonDataset;
use crate::scalar::Scalar;
use crate::train::{predict_split, train_operator, TrainConfig};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub rel_l1_pct: f64,
    pub nrmse: f64,
    pub max_err: f64,
    pub wall_s: f64,
}

pub const ABLATION_CSV_HEADER: &str = "variant,params,rel_l1_pct,nrmse,max_err,wall_s";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.3}\n",
            r.variant, r.params, r.rel_l1_pct, r.nrmse, r.max_err, r.wall_s
        ));
    }
    out
}

fn run_variant<T: Scalar>(
    variant: String,
    op_cfg: &OperatorConfig,
    train_cfg: &TrainConfig,
    dataset: &PoissonDataset,
) -> Result<AblationRow> {
    let start = Instant::now();
    let result = train_operator::<T>(op_cfg, train_cfg, dataset, None)?;
    let n = dataset.train.f.shape()[1];
    let stats = dataset.stats;
    let preds = predict_split(&result.best_params, op_cfg, &dataset.test_ood, n)?;
    let truth: crate::tensor::Tensor<T> = dataset.test_ood.u.cast();
    let pred_dn = stats.denormalize_u_tensor(&preds);
    let truth_dn = stats.denormalize_u_tensor(&truth);
    let metrics = compute_metrics(&pred_dn, &truth_dn)?;
    Ok(AblationRow {
        variant,
        params: result.best_params.num_params(),
        rel_l1_pct: rel_l1_percent(&pred_dn, &truth_dn)?,
        nrmse: metrics.nrmse,
        max_err: metrics.max_err,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Train one model per cascade depth, all else (including the seed) fixed.
/// Metric trends are reported, not asserted.
pub fn run_depth_ablation<T: Scalar>(
    base: &OperatorConfig,
    train_cfg: &TrainConfig,
    dataset: &PoissonDataset,
    depths: &[usize],
    mut progress: Option<&mut dyn FnMut(&AblationRow)>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let mut cfg = base.clone();
        for b in cfg.blocks.iter_mut() {
            b.cascade_depth = depth;
        }
        let row = run_variant::<T>(format!("{depth}-pass"), &cfg, train_cfg, dataset)?;
        if let Some(cb) = progress.as_deref_mut() {
            cb(&row);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Train one model per scan-direction count, all else fixed.
pub fn run_direction_ablation<T: Scalar>(
    base: &OperatorConfig,
    train_cfg: &TrainConfig,
    dataset: &PoissonDataset,
    directions: &[usize],
    mut progress: Option<&mut dyn FnMut(&AblationRow)>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(directions.len());
    for &dirs in directions {
        let mut cfg = base.clone();
        for b in cfg.blocks.iter_mut() {
            b.directions = dirs;
        }
        let row = run_variant::<T>(format!("{dirs}-dir"), &cfg, train_cfg, dataset)?;
        if let Some(cb) = progress.as_deref_mut() {
            cb(&row);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckb::{Aggregation, CkbConfig};
    use crate::poisson::{generate_dataset, PoissonConfig};

    fn tiny() -> (OperatorConfig, TrainConfig, PoissonDataset) {
        let mut pcfg = PoissonConfig::desk(4);
        pcfg.grid = 8;
        pcfg.k = 2;
        pcfg.k_ood = 3;
        pcfg.n_train = 6;
        pcfg.n_val = 2;
        pcfg.n_test_id = 2;
        pcfg.n_test_ood = 2;
        let ds = generate_dataset(&pcfg).unwrap();
        let block = CkbConfig {
            d: 4,
            expansion: 1,
            state_size: 2,
            cascade_depth: 1,
            conv_kernel: 3,
            directions: 1,
            use_mlp: false,
            aggregation: Aggregation::DenseSum,
        };
        let op = OperatorConfig::uniform(1, 1, 4, 1, block);
        let tr = TrainConfig {
            epochs: 2,
            batch_size: 3,
            lr: 1e-3,
            halve_every: 0,
            seed: 5,
            divergence_threshold: 1e3,
        };
        (op, tr, ds)
    }

    #[test]
    fn single_depth_gives_single_row() {
        let (op, tr, ds) = tiny();
        let rows = run_depth_ablation::<f64>(&op, &tr, &ds, &[1], None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].variant, "1-pass");
    }

    #[test]
    fn depth_rows_have_strictly_increasing_params() {
        let (op, tr, ds) = tiny();
        let rows = run_depth_ablation::<f64>(&op, &tr, &ds, &[1, 2, 3], None).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].params > w[0].params, "{w:?}");
        }
    }

    #[test]
    fn csv_has_one_line_per_variant() {
        let (op, tr, ds) = tiny();
        let rows = run_direction_ablation::<f64>(&op, &tr, &ds, &[1, 2], None).unwrap();
        let csv = ablation_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], ABLATION_CSV_HEADER);
        assert!(lines[1].starts_with("1-dir,"));
        assert!(lines[2].starts_with("2-dir,"));
    }
}
