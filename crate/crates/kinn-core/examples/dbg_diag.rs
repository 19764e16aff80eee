// temporary: diagnose learning stall — forward diversity + gradient norms by group
use kinn_core::ckb::*;
use kinn_core::metrics::relative_l2_loss;
use kinn_core::model::*;
use kinn_core::params::Params;
use kinn_core::poisson::{generate_dataset, stream_rng, streams, PoissonConfig};
use kinn_core::tensor::Tensor;

fn main() {
    let mut pcfg = PoissonConfig::desk(7);
    pcfg.n_train = 8; pcfg.n_val = 4; pcfg.n_test_id = 4; pcfg.n_test_ood = 4;
    let ds = generate_dataset(&pcfg).unwrap();
    let block = CkbConfig { d: 32, expansion: 1, state_size: 8, cascade_depth: 2,
        conv_kernel: 3, directions: 4, use_mlp: false, aggregation: Aggregation::DenseSum };
    let cfg = OperatorConfig::uniform(1, 1, 32, 2, block);
    let n = 32usize;

    let params = OperatorParams::<f64>::init(&mut stream_rng(7, streams::INIT), &cfg).unwrap();

    // forward diversity: how much do predictions differ across samples?
    let mut preds = Vec::new();
    for idx in 0..4 {
        let x = Tensor::from_vec(&[1, n, n, 1], ds.train.f.data()[idx*n*n..(idx+1)*n*n].to_vec()).unwrap();
        let (pred, _) = operator_forward(&params, &cfg, &x).unwrap();
        preds.push(pred);
    }
    let mut cross = 0.0f64; let mut scale = 0.0f64;
    for i in 1..4 {
        for (a, b) in preds[0].data().iter().zip(preds[i].data()) {
            cross += (a - b).abs().max(cross * 0.0);
            scale = scale.max(a.abs());
        }
    }
    println!("init pred scale max {:.3e}, total cross-sample |diff| {:.3e}", scale, cross);

    // gradient norms by top-level group on one batch
    let mut grads_acc: Option<OperatorParams<f64>> = None;
    for idx in 0..8 {
        let x = Tensor::from_vec(&[1, n, n, 1], ds.train.f.data()[idx*n*n..(idx+1)*n*n].to_vec()).unwrap();
        let t = Tensor::from_vec(&[1, n, n, 1], ds.train.u.data()[idx*n*n..(idx+1)*n*n].to_vec()).unwrap();
        let (pred, cache) = operator_forward(&params, &cfg, &x).unwrap();
        let (_, gp) = relative_l2_loss(&pred, &t).unwrap();
        let (g, _) = operator_backward(&params, &cfg, &x, &cache, &gp).unwrap();
        match &mut grads_acc { Some(a) => a.add_scaled_params(&g, 1.0), None => grads_acc = Some(g) }
    }
    let grads = grads_acc.unwrap();
    let mut groups: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for (name, t) in grads.entries() {
        let key = name.split('.').take(2).collect::<Vec<_>>().join(".");
        let e = groups.entry(key).or_insert((0.0, 0));
        e.0 += t.data().iter().map(|v| v * v).sum::<f64>();
        e.1 += t.len();
    }
    for (k, (sq, cnt)) in groups {
        println!("{k:<28} rms grad {:.3e}  ({cnt} params)", (sq / cnt as f64).sqrt());
    }
}
