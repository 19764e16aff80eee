// temporary: small-scale sweeps to find what breaks the mean-prediction floor
use kinn_core::ckb::*;
use kinn_core::model::*;
use kinn_core::poisson::{generate_dataset, PoissonConfig};
use kinn_core::train::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let halve: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let expansion: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);
    let kernel: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(3);
    let use_mlp: bool = args.get(6).map(|s| s == "mlp").unwrap_or(false);

    let mut pcfg = PoissonConfig::desk(7);
    pcfg.grid = 16; pcfg.k = 4; pcfg.k_ood = 5;
    pcfg.n_train = 16; pcfg.n_val = 8; pcfg.n_test_id = 4; pcfg.n_test_ood = 4;
    let ds = generate_dataset(&pcfg).unwrap();
    let block = CkbConfig { d: 16, expansion, state_size: 4, cascade_depth: 2,
        conv_kernel: kernel, directions: 2, use_mlp, aggregation: Aggregation::DenseSum };
    let cfg = OperatorConfig::uniform(1, 1, 16, 1, block);
    let tr = TrainConfig { epochs, batch_size: 8, lr, halve_every: halve, seed: 7, divergence_threshold: 1e3 };
    let mut cb = |t: &EpochRecord, v: &EpochRecord| {
        if t.epoch % 50 == 0 || t.epoch + 1 == epochs {
            println!("epoch {:>4} lr {:.1e} train_loss {:.4e} val_nrmse {:.4e}", t.epoch, t.lr, t.loss, v.metrics.nrmse);
        }
    };
    let r: TrainResult<f64> = train_operator(&cfg, &tr, &ds, Some(&mut cb)).unwrap();
    println!("best val {:.4e} @ {}", r.best_val.nrmse, r.best_epoch);
}
