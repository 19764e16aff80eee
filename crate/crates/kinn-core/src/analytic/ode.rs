//! Runge-Kutta reference integrators. These are the verification oracles the
//! closed-form updates are tested against; nothing in the neural path calls
//! them.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::cell::{CascadeSpec, ContinuousCell};

/// Substep count that keeps the RK4 truncation error per outer step below
/// ~1e-10 even at alpha*dt around 5, where a fixed dt/32 rule would not.
fn substeps(alpha_dt: f64) -> usize {
    ((200.0 * alpha_dt).ceil() as usize).max(32)
}

#[inline]
fn rk4_linear_step<T: Scalar>(alpha: T, beta: T, v: T, u: T, h: T) -> T {
    let f = |v: T| -alpha * v + beta * u;
    let half = T::from_f64(0.5);
    let sixth = T::from_f64(1.0 / 6.0);
    let two = T::from_f64(2.0);
    let k1 = f(v);
    let k2 = f(v + half * h * k1);
    let k3 = f(v + half * h * k2);
    let k4 = f(v + h * k3);
    v + h * sixth * (k1 + two * (k2 + k3) + k4)
}

/// RK4 trajectory of one cell under a piecewise-constant input sequence.
///
/// Returns `inputs.len() + 1` states starting at `v0`; entry `t+1` is the
/// state after holding `inputs[t]` for one step of length `dt`.
pub fn simulate_cell_ode<T: Scalar>(
    cell: &ContinuousCell<T>,
    v0: T,
    inputs: &[T],
    dt: T,
) -> Result<Vec<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let (alpha, beta) = cell.state_coeffs();
    let n_sub = substeps((alpha * dt).as_f64());
    let h = dt / T::from_f64(n_sub as f64);
    let mut trajectory = Vec::with_capacity(inputs.len() + 1);
    let mut v = v0;
    trajectory.push(v);
    for &u in inputs {
        for _ in 0..n_sub {
            v = rk4_linear_step(alpha, beta, v, u, h);
        }
        trajectory.push(v);
    }
    Ok(trajectory)
}

/// RK4 trajectory of the full readout cascade
/// `C_l v_l' = -a_l v_l + b_l y_{l-1}`, `y_l = c_l v_l + d_l y_{l-1}`,
/// driven by an arbitrary input signal `u(t)`. Returns the final-stage
/// output sampled at `t_k = k * dt`.
pub fn simulate_readout_cascade<T: Scalar>(
    spec: &CascadeSpec<T>,
    u: impl Fn(T) -> T,
    steps: usize,
    dt: T,
) -> Result<Vec<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let cells = spec.cells();
    let n = cells.len();
    let half = T::from_f64(0.5);
    let sixth = T::from_f64(1.0 / 6.0);
    let two = T::from_f64(2.0);

    // Chain readouts down the cascade and return per-stage state derivatives.
    let derivs = |state: &[T], ut: T, out: &mut [T]| {
        let mut y_prev = ut;
        for (l, cell) in cells.iter().enumerate() {
            out[l] = (-cell.a() * state[l] + cell.b() * y_prev) / cell.c;
            y_prev = cell.c_o * state[l] + cell.d_o * y_prev;
        }
    };
    let readout = |state: &[T], ut: T| {
        let mut y_prev = ut;
        for (l, cell) in cells.iter().enumerate() {
            y_prev = cell.c_o * state[l] + cell.d_o * y_prev;
        }
        y_prev
    };

    let mut v = vec![T::zero(); n];
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(readout(&v, u(T::zero())));
    for step in 0..steps {
        let t = T::from_f64(step as f64) * dt;
        let t_half = t + half * dt;
        let t_full = t + dt;
        derivs(&v, u(t), &mut k1);
        for i in 0..n {
            tmp[i] = v[i] + half * dt * k1[i];
        }
        derivs(&tmp, u(t_half), &mut k2);
        for i in 0..n {
            tmp[i] = v[i] + half * dt * k2[i];
        }
        derivs(&tmp, u(t_half), &mut k3);
        for i in 0..n {
            tmp[i] = v[i] + dt * k3[i];
        }
        derivs(&tmp, u(t_full), &mut k4);
        for i in 0..n {
            v[i] = v[i] + dt * sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
        out.push(readout(&v, u(t_full)));
    }
    Ok(out)
}

/// Steady-state frequency response of the readout cascade measured in the
/// time domain: drive with `sin(omega t)`, let transients decay, then
/// project the output onto sin/cos over whole periods. Comparable directly
/// with the rational transfer function evaluated at `s = i omega`.
pub fn measure_frequency_response<T: Scalar>(
    spec: &CascadeSpec<T>,
    omega: f64,
) -> Result<Complex<f64>> {
    if omega <= 0.0 {
        return Err(Error::InvalidArgument("omega must be > 0".into()));
    }
    let slowest = spec
        .cells()
        .iter()
        .map(|c| (c.a() / c.c).as_f64())
        .fold(f64::INFINITY, f64::min);
    let period = 2.0 * std::f64::consts::PI / omega;
    let per_period = 4096usize;
    let dt = period / per_period as f64;
    let settle_steps = (16.0 / slowest / dt).ceil() as usize;
    let measure_periods = 8usize;
    let measure_steps = measure_periods * per_period;
    let total = settle_steps + measure_steps;

    let omega_t = T::from_f64(omega);
    let y = simulate_readout_cascade(spec, |t: T| (omega_t * t).sin(), total, T::from_f64(dt))?;

    // Trapezoid over exactly `measure_periods` periods; the integrand is
    // periodic there, so the rule is spectrally accurate.
    let mut int_sin = 0.0;
    let mut int_cos = 0.0;
    for k in settle_steps..=total {
        let t = k as f64 * dt;
        let w = if k == settle_steps || k == total { 0.5 } else { 1.0 };
        let yk = y[k].as_f64();
        int_sin += w * yk * (omega * t).sin();
        int_cos += w * yk * (omega * t).cos();
    }
    let span = measure_steps as f64 * dt;
    Ok(Complex::new(2.0 * int_sin * dt / span, 2.0 * int_cos * dt / span))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::cascade::readout_cascade_tf;
    use crate::analytic::cell::zoh_step;

    #[test]
    fn free_decay_matches_exponential() {
        let cell = ContinuousCell::state_only(1.0, 1.0, 0.0, 1.0).unwrap();
        let inputs = vec![0.0; 50];
        let dt = 0.1;
        let traj = simulate_cell_ode(&cell, 1.0, &inputs, dt).unwrap();
        for (k, v) in traj.iter().enumerate() {
            let t = k as f64 * dt;
            assert!((v - (-t).exp()).abs() < 1e-10, "t={t} v={v}");
        }
    }

    #[test]
    fn step_response_rises_monotonically_to_equilibrium() {
        let cell = ContinuousCell::state_only(1.0f64, 2.0, 0.0, 4.0).unwrap();
        let inputs = vec![1.0; 100];
        let traj = simulate_cell_ode(&cell, 0.0, &inputs, 0.1).unwrap();
        for w in traj.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // equilibrium beta/alpha = (4/1)/(2/1) = 2
        assert!((traj.last().unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rk4_matches_zoh_composition() {
        let cell = ContinuousCell::state_only(1.3f64, 0.7, 0.4, -1.1).unwrap();
        let (alpha, beta) = cell.state_coeffs();
        let inputs = [0.3, -1.0, 2.0, 0.0, 0.5];
        let dt = 0.37;
        let traj = simulate_cell_ode(&cell, 0.8, &inputs, dt).unwrap();
        let mut v = 0.8;
        for (t, &u) in inputs.iter().enumerate() {
            v = zoh_step(alpha, beta, v, u, dt).unwrap();
            assert!((v - traj[t + 1]).abs() < 1e-10, "step {t}");
        }
    }

    #[test]
    fn frequency_response_of_single_lowpass() {
        // one stage, pure state readout: H(i w) = b / (C i w + a)
        let cell = ContinuousCell::new(1.0, 2.0, 0.0, 3.0, 1.0, 0.0).unwrap();
        let spec = CascadeSpec::new(vec![cell]).unwrap();
        let omega = 1.0;
        let measured = measure_frequency_response(&spec, omega).unwrap();
        let expected = readout_cascade_tf(&spec).eval_complex(Complex::new(0.0, omega));
        let rel = (measured - expected).norm() / expected.norm();
        assert!(rel < 1e-5, "measured {measured} vs {expected}, rel {rel:e}");
    }
}
