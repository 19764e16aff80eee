//! Single RC cell: continuous-time parameters, exact ZOH update, and the
//! convex retention/equilibrium decomposition.

use crate::error::{Error, Result};
use crate::scalar::{em1_over, Scalar, EM1_SERIES_CUTOFF};

/// Physical parameters of one RC cell.
///
/// The node obeys `C dv/dt = -(g_leak + g_p) v + b_p u` with readout
/// `y = c_o v + d_o u`. Positive `g_p` models coupling that competes with
/// leakage; the signs are absorbed into `g_p` itself, so the effective decay
/// rate is always `alpha = (g_leak + g_p) / C` and construction requires it
/// to be positive (dissipative cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousCell<T> {
    pub c: T,
    pub g_leak: T,
    pub g_p: T,
    pub b_p: T,
    pub c_o: T,
    pub d_o: T,
}

impl<T: Scalar> ContinuousCell<T> {
    pub fn new(c: T, g_leak: T, g_p: T, b_p: T, c_o: T, d_o: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(Error::InvalidArgument(format!("capacitance must be > 0, got {c}")));
        }
        let alpha = (g_leak + g_p) / c;
        if !(alpha > T::zero()) {
            return Err(Error::NonDissipative { alpha: alpha.as_f64() });
        }
        Ok(Self { c, g_leak, g_p, b_p, c_o, d_o })
    }

    /// Cell with pure state readout (`y = v`), for transfer-function work
    /// where only the state chain matters.
    pub fn state_only(c: T, g_leak: T, g_p: T, b_p: T) -> Result<Self> {
        Self::new(c, g_leak, g_p, b_p, T::one(), T::zero())
    }

    /// Total conductance `a = g_leak + g_p` (the first-order denominator
    /// coefficient alongside `C`).
    pub fn a(&self) -> T {
        self.g_leak + self.g_p
    }

    /// Input gain `b = b_p`.
    pub fn b(&self) -> T {
        self.b_p
    }

    /// `(alpha, beta) = ((g_leak + g_p)/C, b_p/C)`: dissipation rate and
    /// injection gain of the normalized state equation.
    pub fn state_coeffs(&self) -> (T, T) {
        ((self.g_leak + self.g_p) / self.c, self.b_p / self.c)
    }
}

/// Ordered chain of dissipative cells; stage `i` is driven by stage `i-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec<T> {
    cells: Vec<ContinuousCell<T>>,
}

impl<T: Scalar> CascadeSpec<T> {
    pub fn new(cells: Vec<ContinuousCell<T>>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidArgument("cascade needs at least one cell".into()));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[ContinuousCell<T>] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees n >= 1
    }
}

fn check_step_args<T: Scalar>(alpha: T, dt: T) -> Result<()> {
    if !(alpha > T::zero()) {
        return Err(Error::NonDissipative { alpha: alpha.as_f64() });
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    Ok(())
}

/// Exact ZOH update: `v' = e^{-alpha dt} v + beta (1 - e^{-alpha dt})/alpha u`.
///
/// For `alpha*dt >= 1e-4` the injection term is written as
/// `(1 - g) * (beta/alpha * u)` so it recombines bit-for-bit with
/// [`convex_decomposition`]; below the cutoff the cancellation-free
/// `beta * dt * (1 - e^{-x})/x` path takes over.
pub fn zoh_step<T: Scalar>(alpha: T, beta: T, v: T, u: T, dt: T) -> Result<T> {
    check_step_args(alpha, dt)?;
    let x = alpha * dt;
    let g = (-x).exp();
    if x < T::from_f64(EM1_SERIES_CUTOFF) {
        Ok(g * v + beta * dt * em1_over(x) * u)
    } else {
        Ok(g * v + (T::one() - g) * (beta / alpha * u))
    }
}

/// Retention factor `g = e^{-alpha dt} in (0,1)` and input-driven equilibrium
/// `eq = (beta/alpha) u`. The ZOH update is exactly `g v + (1 - g) eq`.
pub fn convex_decomposition<T: Scalar>(alpha: T, beta: T, u: T, dt: T) -> Result<(T, T)> {
    check_step_args(alpha, dt)?;
    let g = (-(alpha * dt)).exp();
    // g can underflow to exactly 0 for extreme alpha*dt; it never reaches 1
    debug_assert!(g >= T::zero() && g < T::one());
    Ok((g, beta / alpha * u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_coeffs_direct_substitution() {
        let cell = ContinuousCell::state_only(1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(cell.state_coeffs(), (1.0, 1.0));
        let cell = ContinuousCell::state_only(2.0, 1.0, 1.0, 4.0).unwrap();
        assert_eq!(cell.state_coeffs(), (1.0, 2.0));
    }

    #[test]
    fn non_dissipative_cell_rejected() {
        let err = ContinuousCell::state_only(1.0, 0.0, -1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::NonDissipative { .. }));
        let err = ContinuousCell::state_only(-1.0, 1.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn zoh_halving_at_ln2() {
        // alpha = ln 2, no input: one unit step halves the state.
        let v = zoh_step(std::f64::consts::LN_2, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn zoh_reaches_equilibrium() {
        // long step drives the state to beta/alpha * u
        let v = zoh_step(2.0f64, 4.0, 0.0, 1.0, 50.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn zoh_identity_limit_small_dt() {
        let v0 = 3.0f64;
        let v = zoh_step(1.0, 1.0, v0, -7.5, 1e-12).unwrap();
        assert!((v - v0).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn zoh_rejects_bad_dt() {
        assert!(zoh_step(1.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(zoh_step(1.0, 1.0, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn convex_recombination_is_bit_exact() {
        // g v + (1-g) eq must reproduce zoh_step exactly on the normal path
        let (alpha, beta, u, dt) = (1.0, 1.0, 2.0, std::f64::consts::LN_2);
        let (g, eq) = convex_decomposition(alpha, beta, u, dt).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
        assert_eq!(eq, 2.0);
        for k in 0..1000 {
            let v = -3.0 + 0.006 * k as f64;
            let direct = zoh_step(alpha, beta, v, u, dt).unwrap();
            let recombined = g * v + (1.0 - g) * eq;
            assert_eq!(direct, recombined, "v={v}");
        }
    }

    #[test]
    fn retention_stays_in_unit_interval() {
        let (g, _) = convex_decomposition(5.0f64, 1.0, 1.0, 10.0).unwrap();
        assert!(g > 0.0 && g < 1.0);
        assert!((g - 1.9287498479639178e-22).abs() < 1e-30);
    }

    #[test]
    fn retention_limit_small_dt() {
        let (g, _) = convex_decomposition(1.0, 1.0, 1.0, 1e-14).unwrap();
        assert!(g < 1.0 && g > 1.0 - 1e-13);
    }
}
