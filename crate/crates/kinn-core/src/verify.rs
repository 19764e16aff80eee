//! Self-check registry: every analytic oracle in one place, runnable as a
//! quick (< 60 s) or full sweep. The CLI `verify` subcommand formats these
//! results; the acceptance suite asserts them.

use rand::Rng;
use serde::Serialize;

use crate::analytic::{
    cascade_ode_coeffs, cascade_transfer, convex_decomposition, discrete_cascade_impulse,
    erlang_kernel, measure_frequency_response, readout_cascade_tf, simulate_cell_ode, zoh_step,
    CascadeSpec, ContinuousCell,
};
use crate::ckb::{ckb_backward, ckb_forward, Aggregation, CkbConfig, CkbParams};
use crate::gradcheck::{fd_gradient_check, probe_like, weighted_sum, FD_EPS};
use crate::knc::{knc_scan, knc_scan_backward, SelectiveKncParams};
use crate::metrics::relative_l2_loss;
use crate::nn::{
    dsconv1d, dsconv1d_backward, layer_norm, layer_norm_backward, linear, linear_backward, mlp,
    mlp_backward, DsConvParams, LayerNormParams, LinearParams, MlpParams,
};
use crate::poisson::{
    eval_source, fd_laplacian_residual, sample_coeffs, solve_poisson_spectral, stream_rng,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn finish(name: &'static str, passed: bool, detail: String, start: std::time::Instant) -> CheckResult {
    CheckResult { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// ZOH composition vs the RK4 reference over random dissipative cells.
pub fn check_zoh_vs_rk4(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let cases = if level == VerifyLevel::Full { 1000 } else { 150 };
    let steps = 20;
    let mut rng = stream_rng(101, 0);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let alpha = 0.1 + 4.9 * rng.gen::<f64>();
        let beta = -2.0 + 4.0 * rng.gen::<f64>();
        let dt = 0.01 + 0.99 * rng.gen::<f64>();
        let v0 = -3.0 + 6.0 * rng.gen::<f64>();
        let inputs: Vec<f64> = (0..steps).map(|_| -3.0 + 6.0 * rng.gen::<f64>()).collect();
        let cell = ContinuousCell::state_only(1.0, alpha, 0.0, beta).unwrap();
        let reference = simulate_cell_ode(&cell, v0, &inputs, dt).unwrap();
        let mut v = v0;
        for (t, &u) in inputs.iter().enumerate() {
            v = zoh_step(alpha, beta, v, u, dt).unwrap();
            worst = worst.max((v - reference[t + 1]).abs());
        }
    }
    finish("zoh_vs_rk4", worst < 1e-8, format!("max |zoh - rk4| = {worst:.3e} over {cases} cases"), start)
}

/// Convex decomposition recombines to the ZOH update at 1e-14 relative.
pub fn check_convex_recombination(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let cases = if level == VerifyLevel::Full { 1000 } else { 200 };
    let mut rng = stream_rng(102, 0);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let alpha = 0.1 + 4.9 * rng.gen::<f64>();
        let beta = -2.0 + 4.0 * rng.gen::<f64>();
        let dt = 0.01 + 0.99 * rng.gen::<f64>();
        let v = -3.0 + 6.0 * rng.gen::<f64>();
        let u = -3.0 + 6.0 * rng.gen::<f64>();
        let direct = zoh_step(alpha, beta, v, u, dt).unwrap();
        let (g, eq) = convex_decomposition(alpha, beta, u, dt).unwrap();
        let recombined = g * v + (1.0 - g) * eq;
        let rel = (direct - recombined).abs() / direct.abs().max(1e-300);
        worst = worst.max(rel);
    }
    finish("convex_recombination", worst < 1e-14, format!("max rel diff = {worst:.3e} over {cases} cases"), start)
}

/// Independent coefficient-list convolution, the oracle for order lifting.
fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Expanded cascade denominator == convolution of per-cell pairs (a, C);
/// exact for integer parameters, 1e-12 relative for float parameters.
pub fn check_order_lifting(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let trials = if level == VerifyLevel::Full { 200 } else { 40 };
    let mut rng = stream_rng(103, 0);
    let mut exact_fail = 0usize;
    let mut worst_float = 0.0f64;
    for _ in 0..trials {
        let n = 1 + rng.gen_range(0..5usize);

        // integer parameters: exact match required
        let cells: Vec<ContinuousCell<f64>> = (0..n)
            .map(|_| {
                let c = rng.gen_range(1..=5) as f64;
                let a = rng.gen_range(1..=5) as f64;
                let b = rng.gen_range(1..=5) as f64;
                ContinuousCell::state_only(c, a, 0.0, b).unwrap()
            })
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let (gamma, kappa) = cascade_ode_coeffs(&spec);
        let mut expect = vec![1.0f64];
        let mut kappa_expect = 1.0;
        for cell in spec.cells() {
            expect = convolve(&expect, &[cell.a(), cell.c]);
            kappa_expect *= cell.b();
        }
        if gamma.coeffs() != expect.as_slice() || kappa != kappa_expect {
            exact_fail += 1;
        }

        // float parameters: 1e-12 relative
        let cells: Vec<ContinuousCell<f64>> = (0..n)
            .map(|_| {
                let c = 0.5 + 2.0 * rng.gen::<f64>();
                let a = 0.3 + 3.0 * rng.gen::<f64>();
                let b = 0.5 + 2.0 * rng.gen::<f64>();
                ContinuousCell::state_only(c, a, 0.0, b).unwrap()
            })
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let tf = cascade_transfer(&spec);
        let mut expect = vec![1.0f64];
        for cell in spec.cells() {
            expect = convolve(&expect, &[cell.a(), cell.c]);
        }
        for (got, want) in tf.den.coeffs().iter().zip(&expect) {
            worst_float = worst_float.max((got - want).abs() / want.abs().max(1e-12));
        }
    }
    finish(
        "order_lifting",
        exact_fail == 0 && worst_float < 1e-12,
        format!("{exact_fail} integer mismatches, float rel = {worst_float:.3e} over {trials} cascades"),
        start,
    )
}

/// Closed-form Erlang kernel vs iterated trapezoid convolution of the
/// first-order kernel, relative to the kernel peak.
pub fn check_erlang_convolution(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let dt: f64 = if level == VerifyLevel::Full { 1e-3 } else { 2e-3 };
    let t_max = 10.0;
    let m = (t_max / dt).round() as usize + 1;
    let grid: Vec<f64> = (0..m).map(|k| k as f64 * dt).collect();
    let (a, b, c) = (1.3, 0.9, 1.1);
    let h1 = erlang_kernel(1, a, b, c, &grid).unwrap();

    let mut current = h1.clone();
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for n in 2..=4usize {
        // conv[k] = dt * sum_j w_j current[j] h1[k-j], trapezoid weights;
        // k = 0 integrates over a zero-length interval and is exactly 0
        let mut conv = vec![0.0f64; m];
        for k in 1..m {
            let mut acc = 0.0;
            for j in 0..=k {
                let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                acc += w * current[j] * h1[k - j];
            }
            conv[k] = acc * dt;
        }
        let closed = erlang_kernel(n, a, b, c, &grid).unwrap();
        let peak = closed.iter().fold(0.0f64, |m, &v| m.max(v));
        let err = conv
            .iter()
            .zip(&closed)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
            / peak;
        worst = worst.max(err);
        detail.push_str(&format!("n={n}: {err:.3e}  "));
        current = conv;
    }
    finish("erlang_convolution", worst < 1e-4, detail.trim().to_string(), start)
}

/// Discrete ZOH impulse converges to the continuous kernel at first order:
/// halving dt roughly halves the max deviation.
pub fn check_impulse_convergence(_level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let (a, b, c) = (1.3, 0.9, 1.1);
    let mut detail = String::new();
    let mut ok = true;
    for n in [1usize, 2, 3] {
        let cells =
            (0..n).map(|_| ContinuousCell::state_only(c, a, 0.0, b).unwrap()).collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let deviation = |dt: f64| {
            let steps = (6.0 / dt).round() as usize;
            let resp = discrete_cascade_impulse(&spec, dt, steps).unwrap();
            let times: Vec<f64> = (0..steps).map(|k| (k + 1) as f64 * dt).collect();
            let closed = erlang_kernel(n, a, b, c, &times).unwrap();
            resp.iter().zip(&closed).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
        };
        let ratio = deviation(0.02) / deviation(0.01);
        detail.push_str(&format!("n={n}: ratio {ratio:.3}  "));
        ok &= (1.7..=2.3).contains(&ratio);
    }
    finish("impulse_convergence", ok, detail.trim().to_string(), start)
}

/// Steady-state sinusoid response of random 3-stage readout cascades vs the
/// rational transfer function at s = i omega.
pub fn check_readout_frequency(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let specs = if level == VerifyLevel::Full { 3 } else { 1 };
    let mut rng = stream_rng(104, 0);
    let mut worst = 0.0f64;
    for _ in 0..specs {
        let cells: Vec<ContinuousCell<f64>> = (0..3)
            .map(|_| {
                ContinuousCell::new(
                    0.5 + 1.5 * rng.gen::<f64>(),
                    0.3 + 1.7 * rng.gen::<f64>(),
                    0.1 + 0.9 * rng.gen::<f64>(),
                    0.5 + 1.5 * rng.gen::<f64>(),
                    0.5 + rng.gen::<f64>(),
                    0.5 + rng.gen::<f64>(),
                )
                .unwrap()
            })
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let tf = readout_cascade_tf(&spec);
        for omega in [0.5, 1.0, 2.0] {
            let measured = measure_frequency_response(&spec, omega).unwrap();
            let expected = tf.eval_complex(num_complex::Complex::new(0.0, omega));
            let rel = (measured - expected).norm() / expected.norm();
            worst = worst.max(rel);
        }
    }
    finish(
        "readout_frequency",
        worst < 1e-3,
        format!("max rel response error = {worst:.3e} over {specs} specs x 3 frequencies"),
        start,
    )
}

/// Cascade denominators keep every pole strictly in the left half-plane.
pub fn check_stable_poles(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let trials = if level == VerifyLevel::Full { 100 } else { 25 };
    let mut rng = stream_rng(105, 0);
    let mut ok = true;
    for _ in 0..trials {
        let n = 1 + rng.gen_range(0..6usize);
        let cells: Vec<ContinuousCell<f64>> = (0..n)
            .map(|_| {
                ContinuousCell::state_only(
                    0.3 + 2.0 * rng.gen::<f64>(),
                    0.2 + 3.0 * rng.gen::<f64>(),
                    0.0,
                    1.0,
                )
                .unwrap()
            })
            .collect();
        let tf = cascade_transfer(&CascadeSpec::new(cells).unwrap());
        ok &= tf.is_stable();
    }
    finish("stable_poles", ok, format!("{trials} random dissipative cascades, n <= 6"), start)
}

/// FD gradient suite at the standard shapes B=2, L=16, d=8, E=2, S=4, N=2.
/// Primitive ops must satisfy the strict relative bound 1e-5; the full block
/// (whose deep entries sit at the FD noise floor) the dual bound.
pub fn check_fd_gradients(_level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let (b, l, d, e, s, n_casc) = (2usize, 16usize, 8usize, 2usize, 4usize, 2usize);
    let inner = e * d;
    let mut rng = stream_rng(106, 0);
    let mut detail = String::new();
    let mut ok = true;

    // linear
    let p = LinearParams::<f64>::init(&mut rng, d, inner);
    let x = Tensor::uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let w = probe_like(&mut rng, &[b, l, inner]);
    let (grads, _) = linear_backward(&p, &x, &w).unwrap();
    let rep = fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&linear(p, &x).unwrap(), &w));
    ok &= rep.max_rel_err < 1e-5;
    detail.push_str(&format!("linear {:.1e}  ", rep.max_rel_err));

    // dsconv1d
    let p = DsConvParams::<f64>::init(&mut rng, d, 3).unwrap();
    let x = Tensor::uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let w = probe_like(&mut rng, &[b, l, d]);
    let (_, mid) = dsconv1d(&p, &x).unwrap();
    let (grads, _) = dsconv1d_backward(&p, &x, &mid, &w).unwrap();
    let rep = fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&dsconv1d(p, &x).unwrap().0, &w));
    ok &= rep.max_rel_err < 1e-5;
    detail.push_str(&format!("dsconv {:.1e}  ", rep.max_rel_err));

    // layer_norm
    let p = LayerNormParams::<f64>::init(d);
    let x = Tensor::uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let w = probe_like(&mut rng, &[b, l, d]);
    let (_, cache) = layer_norm(&p, &x).unwrap();
    let (grads, _) = layer_norm_backward(&p, &x, &cache, &w).unwrap();
    let rep =
        fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&layer_norm(p, &x).unwrap().0, &w));
    ok &= rep.max_rel_err < 1e-5;
    detail.push_str(&format!("layer_norm {:.1e}  ", rep.max_rel_err));

    // mlp
    let p = MlpParams::<f64>::init(&mut rng, d, inner);
    let x = Tensor::uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let w = probe_like(&mut rng, &[b, l, d]);
    let (_, cache) = mlp(&p, &x).unwrap();
    let (grads, _) = mlp_backward(&p, &x, &cache, &w).unwrap();
    let rep = fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&mlp(p, &x).unwrap().0, &w));
    ok &= rep.max_rel_err < 1e-5;
    detail.push_str(&format!("mlp {:.1e}  ", rep.max_rel_err));

    // knc_scan
    let p = SelectiveKncParams::<f64>::init(&mut rng, d, s);
    let u = Tensor::uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let w = probe_like(&mut rng, &[b, l, d]);
    let fwd = knc_scan(&p, &u).unwrap();
    let (grads, _) = knc_scan_backward(&p, &u, &fwd, &w).unwrap();
    let rep =
        fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&knc_scan(p, &u).unwrap().y, &w));
    ok &= rep.max_rel_err < 1e-5;
    detail.push_str(&format!("knc_scan {:.1e}  ", rep.max_rel_err));

    // relative_l2_loss
    let truth = Tensor::uniform(&mut rng, &[b, l * d], -1.0, 1.0);
    let pred = Tensor::uniform(&mut rng, &[b, l * d], -1.0, 1.0);
    let (_, grad) = relative_l2_loss(&pred, &truth).unwrap();
    let rep = fd_gradient_check(&pred, &grad, FD_EPS, |p| relative_l2_loss(p, &truth).unwrap().0);
    ok &= rep.max_rel_err < 1e-5;
    detail.push_str(&format!("rel_l2 {:.1e}  ", rep.max_rel_err));

    // full CKB block, dual rule, centered probe
    let cfg = CkbConfig {
        d,
        expansion: e,
        state_size: s,
        cascade_depth: n_casc,
        conv_kernel: 3,
        directions: 1,
        use_mlp: false,
        aggregation: Aggregation::DenseSum,
    };
    let p = CkbParams::<f64>::init(&mut rng, &cfg).unwrap();
    let x = Tensor::uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let w = probe_like(&mut rng, &[b, l, d]);
    let (_, cache) = ckb_forward(&p, &cfg, &x).unwrap();
    let (grads, _) = ckb_backward(&p, &cfg, &x, &cache, &w).unwrap();
    let rep = fd_gradient_check(&p, &grads, FD_EPS, |p| {
        let mut out = ckb_forward(p, &cfg, &x).unwrap().0;
        out.add_scaled(&x, -1.0);
        weighted_sum(&out, &w)
    });
    ok &= rep.passes_dual();
    detail.push_str(&format!("ckb dual {:.2}", rep.max_dual_err));

    finish("fd_gradients", ok, detail.trim().to_string(), start)
}

/// Five-point residual of generated pairs decays second order, and the
/// spectral solution is linear in the source.
pub fn check_poisson_oracle(level: VerifyLevel) -> CheckResult {
    let start = std::time::Instant::now();
    let samples = if level == VerifyLevel::Full { 3 } else { 1 };
    let mut ok = true;
    let mut detail = String::new();
    for t in 0..samples {
        let a = sample_coeffs(3, &mut stream_rng(107, t as u64));
        let res = |n: usize| {
            fd_laplacian_residual(&eval_source(&a, -0.5, n), &solve_poisson_spectral(&a, -0.5, n), n)
        };
        let ratio = res(32) / res(64);
        ok &= (3.2..=4.8).contains(&ratio);
        detail.push_str(&format!("ratio {ratio:.2}  "));
    }
    // linearity
    let a1 = sample_coeffs(6, &mut stream_rng(107, 100));
    let a2 = sample_coeffs(6, &mut stream_rng(107, 101));
    let mut a_sum = a1.clone();
    a_sum.add_scaled(&a2, 1.0);
    let n = 33;
    let u1 = solve_poisson_spectral(&a1, -0.5, n);
    let u2 = solve_poisson_spectral(&a2, -0.5, n);
    let u_sum = solve_poisson_spectral(&a_sum, -0.5, n);
    let scale = u_sum.max_abs().max(1.0);
    let mut lin_worst = 0.0f64;
    for i in 0..n * n {
        lin_worst = lin_worst.max((u_sum.data()[i] - u1.data()[i] - u2.data()[i]).abs() / scale);
    }
    ok &= lin_worst < 1e-12;
    detail.push_str(&format!("linearity {lin_worst:.2e}"));
    finish("poisson_oracle", ok, detail, start)
}

pub fn run_checks(level: VerifyLevel, filter: Option<&str>) -> Vec<CheckResult> {
    let checks: Vec<(&'static str, fn(VerifyLevel) -> CheckResult)> = vec![
        ("zoh_vs_rk4", check_zoh_vs_rk4),
        ("convex_recombination", check_convex_recombination),
        ("order_lifting", check_order_lifting),
        ("erlang_convolution", check_erlang_convolution),
        ("impulse_convergence", check_impulse_convergence),
        ("readout_frequency", check_readout_frequency),
        ("stable_poles", check_stable_poles),
        ("fd_gradients", check_fd_gradients),
        ("poisson_oracle", check_poisson_oracle),
    ];
    checks
        .into_iter()
        .filter(|(name, _)| filter.map(|f| name.contains(f)).unwrap_or(true))
        .map(|(_, f)| f(level))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_all_pass() {
        for result in run_checks(VerifyLevel::Quick, None) {
            assert!(result.passed, "{} failed: {}", result.name, result.detail);
        }
    }

    #[test]
    fn filter_narrows_the_registry() {
        let results = run_checks(VerifyLevel::Quick, Some("erlang"));
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "erlang_convolution");
    }
}
