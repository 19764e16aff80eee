//! Central finite-difference gradient oracle. Runs in f64 only; this is the
//! correctness authority every hand-written backward pass must satisfy.

use rand::Rng;

use crate::params::Params;
use crate::tensor::Tensor;

pub const FD_EPS: f64 = 1e-6;
/// Relative tolerance of the dual pass rule.
pub const FD_RTOL: f64 = 1e-5;
/// Absolute tolerance of the dual pass rule. Central differences in f64 at
/// eps 1e-6 carry an absolute noise floor around 1e-9 (loss roundoff over
/// eps plus eps^2-scale truncation), so gradient entries smaller than that
/// cannot be certified in purely relative terms by any implementation.
pub const FD_ATOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FdReport {
    /// Max of `|num - ana| / max(|num|, |ana|, 1e-8)` over all entries.
    pub max_rel_err: f64,
    /// Max of `|num - ana| / (atol + rtol * max(|num|, |ana|))`; the dual
    /// rule passes when this is <= 1.
    pub max_dual_err: f64,
    pub worst_entry: String,
    pub checked: usize,
}

impl FdReport {
    /// Strict relative criterion; appropriate for ops whose gradient entries
    /// are well above the FD noise floor.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    /// `|num - ana| <= FD_ATOL + FD_RTOL * max(|num|, |ana|)` everywhere.
    /// A 1% gradient corruption on any entry above 1e-6 still trips this.
    pub fn passes_dual(&self) -> bool {
        self.max_dual_err <= 1.0
    }
}

/// Sweep every entry of `params` with central differences
/// `(f(p + eps e) - f(p - eps e)) / 2 eps` and compare against `analytic`.
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn fd_gradient_check<P: Params<f64>>(
    params: &P,
    analytic: &P,
    eps: f64,
    mut loss: impl FnMut(&P) -> f64,
) -> FdReport {
    let mut work = params.clone();
    let analytic_entries: Vec<(String, Vec<f64>)> = analytic
        .entries()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();

    let mut report =
        FdReport { max_rel_err: 0.0, max_dual_err: 0.0, worst_entry: String::new(), checked: 0 };
    let n_tensors = analytic_entries.len();
    for ti in 0..n_tensors {
        let len = analytic_entries[ti].1.len();
        for i in 0..len {
            let nudge = |w: &mut P, delta: f64| {
                let mut es = w.entries_mut();
                es[ti].1.data_mut()[i] += delta;
            };
            nudge(&mut work, eps);
            let up = loss(&work);
            nudge(&mut work, -2.0 * eps);
            let down = loss(&work);
            nudge(&mut work, eps);

            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic_entries[ti].1[i];
            let diff = (numeric - exact).abs();
            let mag = numeric.abs().max(exact.abs());
            let rel = diff / mag.max(1e-8);
            let dual = diff / (FD_ATOL + FD_RTOL * mag);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_entry = format!("{}[{}]", analytic_entries[ti].0, i);
            }
            report.max_dual_err = report.max_dual_err.max(dual);
        }
    }
    report
}

/// Fixed random probe so a tensor-valued op reduces to a scalar loss
/// `sum(w .* y)`; backpropagating it means seeding the reverse pass with `w`.
pub fn probe_like<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(rng, shape, -1.0, 1.0)
}

pub fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    debug_assert_eq!(y.shape(), w.shape());
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{linear, linear_backward, LinearParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (LinearParams<f64>, Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LinearParams::init(&mut rng, 4, 3);
        let x = Tensor::uniform(&mut rng, &[2, 5, 4], -1.0, 1.0);
        let w = probe_like(&mut rng, &[2, 5, 3]);
        (p, x, w)
    }

    #[test]
    fn linear_gradient_agrees_with_fd() {
        let (p, x, w) = setup();
        let (grads, _) = linear_backward(&p, &x, &w).unwrap();
        let report =
            fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&linear(p, &x).unwrap(), &w));
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn input_gradient_agrees_with_fd() {
        let (p, x, w) = setup();
        let (_, gx) = linear_backward(&p, &x, &w).unwrap();
        let report =
            fd_gradient_check(&x, &gx, FD_EPS, |x| weighted_sum(&linear(&p, x).unwrap(), &w));
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (p, x, w) = setup();
        let (mut grads, _) = linear_backward(&p, &x, &w).unwrap();
        grads.scale_params(1.01);
        let report =
            fd_gradient_check(&p, &grads, FD_EPS, |p| weighted_sum(&linear(p, &x).unwrap(), &w));
        assert!(
            report.max_rel_err > 3e-3 && report.max_rel_err < 3e-2,
            "1% corruption should surface as ~1e-2 rel err, got {:e}",
            report.max_rel_err
        );
    }

    #[test]
    fn zero_function_has_zero_error() {
        let x = Tensor::<f64>::zeros(&[3]);
        let g = x.zeros_like();
        let report = fd_gradient_check(&x, &g, FD_EPS, |_| 0.0);
        assert_eq!(report.max_rel_err, 0.0);
        assert_eq!(report.checked, 3);
    }
}
