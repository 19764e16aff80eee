//! Adam with bias correction and a halving learning-rate schedule.

use crate::params::Params;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators mirroring the parameter structure.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    m: P,
    v: P,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradient contained non-finite entries; parameters and step counter
    /// were left untouched.
    RejectedNonFinite,
}

impl<P> AdamState<P> {
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl<P: Clone> AdamState<P> {
    pub fn new<T: Scalar>(params: &P) -> Self
    where
        P: Params<T>,
    {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One Adam update. Moments decay only on applied steps so a rejected
/// gradient leaves the whole state untouched.
pub fn adam_step<T: Scalar, P: Params<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
    lr: f64,
    cfg: &AdamConfig,
) -> StepOutcome {
    if grads.entries().iter().any(|(_, t)| !t.all_finite()) {
        return StepOutcome::RejectedNonFinite;
    }
    state.step += 1;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - cfg.beta1.powi(state.step as i32));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powi(state.step as i32));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(cfg.eps);

    let g_entries = grads.entries();
    let mut m_entries = state.m.entries_mut();
    let mut v_entries = state.v.entries_mut();
    let mut i = 0;
    params.walk_mut("", &mut |name, p| {
        debug_assert_eq!(name, g_entries[i].0);
        let g = g_entries[i].1.data();
        let m = m_entries[i].1.data_mut();
        let v = v_entries[i].1.data_mut();
        let pd = p.data_mut();
        for j in 0..pd.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pd[j] = pd[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        i += 1;
    });
    StepOutcome::Applied
}

/// `lr0 * 0.5^(epoch / halve_every)` (integer division).
pub fn scheduled_lr(lr0: f64, epoch: usize, halve_every: usize) -> f64 {
    if halve_every == 0 {
        return lr0;
    }
    lr0 * 0.5f64.powi((epoch / halve_every) as i32)
}
