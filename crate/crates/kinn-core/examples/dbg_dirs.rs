// temporary: FD-check all four traversal directions + forward consistency probes
use kinn_core::ckb::*;
use kinn_core::gradcheck::{fd_gradient_check, probe_like, weighted_sum, FD_EPS};
use kinn_core::poisson::stream_rng;
use kinn_core::tensor::Tensor;

fn main() {
    let cfg = CkbConfig {
        d: 4, expansion: 1, state_size: 2, cascade_depth: 2,
        conv_kernel: 3, directions: 4, use_mlp: false, aggregation: Aggregation::DenseSum,
    };
    let mut rng = stream_rng(77, 0);
    let p = CkbParams::<f64>::init(&mut rng, &cfg).unwrap();
    let f = Tensor::uniform(&mut rng, &[1, 4, 5, 4], -1.0, 1.0);
    let gy = probe_like(&mut rng, &[1, 4, 5, 4]);
    let (_, cache) = directional_scan_2d(&p, &cfg, &f).unwrap();
    let (grads, gx) = directional_scan_2d_backward(&p, &cfg, &f, &cache, &gy).unwrap();

    let rep = fd_gradient_check(&p, &grads, FD_EPS, |p| {
        let mut out = directional_scan_2d(p, &cfg, &f).unwrap().0;
        out.add_scaled(&f, -1.0);
        weighted_sum(&out, &gy)
    });
    println!("dirs=4 params FD: rel {:.3e} dual {:.3} worst {}", rep.max_rel_err, rep.max_dual_err, rep.worst_entry);

    let rep = fd_gradient_check(&f, &gx, FD_EPS, |x| {
        weighted_sum(&directional_scan_2d(&p, &cfg, x).unwrap().0, &gy)
    });
    println!("dirs=4 input  FD: rel {:.3e} dual {:.3} worst {}", rep.max_rel_err, rep.max_dual_err, rep.worst_entry);
}
