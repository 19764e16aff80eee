//! Cascade composition: transfer functions, the induced n-th-order ODE,
//! readout-level operator products, and impulse kernels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::cell::{zoh_step, CascadeSpec};
use super::poly::{Polynomial, RationalTF};

/// End-to-end transfer function of the state chain:
/// `V_n(s)/U(s) = prod_i b_i / (C_i s + a_i)`.
///
/// The numerator is the constant `prod b_i`; the denominator is the exact
/// expansion of `prod (C_i s + a_i)`, degree n.
pub fn cascade_transfer<T: Scalar>(spec: &CascadeSpec<T>) -> RationalTF<T> {
    let mut num = T::one();
    let mut den = Polynomial::constant(T::one());
    for cell in spec.cells() {
        num = num * cell.b();
        den = den.mul(&Polynomial::new(vec![cell.a(), cell.c]));
    }
    RationalTF::new(Polynomial::constant(num), den).expect("cascade denominator is never zero")
}

/// Coefficients `(gamma, kappa)` of the equivalent n-th-order ODE
/// `sum_k gamma_k d^k v_n / dt^k = kappa u`: gamma is the expanded cascade
/// denominator and `kappa = prod b_i`.
pub fn cascade_ode_coeffs<T: Scalar>(spec: &CascadeSpec<T>) -> (Polynomial<T>, T) {
    let tf = cascade_transfer(spec);
    let kappa = tf.num.coeffs()[0];
    (tf.den, kappa)
}

/// Operator identity for the readout chain `y_l = c_l v_l + d_l y_{l-1}`:
/// `lhs(d/dt) y_n = rhs(d/dt) u` with
/// `lhs = prod (C_l s + a_l)` and `rhs = prod (d_l C_l s + d_l a_l + c_l b_l)`.
pub fn readout_cascade_operator<T: Scalar>(spec: &CascadeSpec<T>) -> (Polynomial<T>, Polynomial<T>) {
    let mut lhs = Polynomial::constant(T::one());
    let mut rhs = Polynomial::constant(T::one());
    for cell in spec.cells() {
        lhs = lhs.mul(&Polynomial::new(vec![cell.a(), cell.c]));
        rhs = rhs.mul(&Polynomial::new(vec![
            cell.d_o * cell.a() + cell.c_o * cell.b(),
            cell.d_o * cell.c,
        ]));
    }
    (lhs, rhs)
}

/// Transfer function of the readout chain, `rhs / lhs`.
pub fn readout_cascade_tf<T: Scalar>(spec: &CascadeSpec<T>) -> RationalTF<T> {
    let (lhs, rhs) = readout_cascade_operator(spec);
    RationalTF::new(rhs, lhs).expect("cascade denominator is never zero")
}

/// Impulse response of n identical stages `b/(Cs+a)`:
/// `h_n(t) = (b/C)^n t^{n-1} / (n-1)! e^{-(a/C) t}` for `t >= 0`, else 0.
pub fn erlang_kernel<T: Scalar>(n: usize, a: T, b: T, c: T, t: &[T]) -> Result<Vec<T>> {
    if n < 1 {
        return Err(Error::InvalidArgument("kernel order must be >= 1".into()));
    }
    if !(c > T::zero()) {
        return Err(Error::InvalidArgument("capacitance must be > 0".into()));
    }
    if !(a > T::zero()) {
        return Err(Error::NonDissipative { alpha: (a / c).as_f64() });
    }
    let rate = a / c;
    let gain = b / c;
    let mut fact = T::one();
    for k in 1..n {
        fact = fact * T::from_f64(k as f64);
    }
    let scale = gain.powi(n as i32) / fact;
    Ok(t.iter()
        .map(|&ti| {
            if ti < T::zero() {
                T::zero()
            } else {
                scale * ti.powi(n as i32 - 1) * (-rate * ti).exp()
            }
        })
        .collect())
}

/// Discrete impulse response of the ZOH-discretized cascade.
///
/// The unit impulse is approximated by the area-one pulse `u_0 = 1/dt`.
/// Each step advances every stage with the upstream state held at its value
/// from the start of the step, so the response converges to the continuous
/// kernel at O(dt). Sample k approximates the response at `t = (k+1) dt`.
pub fn discrete_cascade_impulse<T: Scalar>(
    spec: &CascadeSpec<T>,
    dt: T,
    steps: usize,
) -> Result<Vec<T>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let coeffs: Vec<(T, T)> = spec.cells().iter().map(|c| c.state_coeffs()).collect();
    let n = coeffs.len();
    let mut state = vec![T::zero(); n];
    let mut prev = vec![T::zero(); n];
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let pulse = if step == 0 { T::one() / dt } else { T::zero() };
        prev.copy_from_slice(&state);
        for (l, &(alpha, beta)) in coeffs.iter().enumerate() {
            let drive = if l == 0 { pulse } else { prev[l - 1] };
            state[l] = zoh_step(alpha, beta, prev[l], drive, dt)?;
        }
        out.push(state[n - 1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::cell::ContinuousCell;

    fn unit_cells(n: usize) -> CascadeSpec<f64> {
        let cells = (0..n)
            .map(|_| ContinuousCell::state_only(1.0, 1.0, 0.0, 1.0).unwrap())
            .collect();
        CascadeSpec::new(cells).unwrap()
    }

    #[test]
    fn two_unit_cells_give_s_plus_one_squared() {
        let tf = cascade_transfer(&unit_cells(2));
        assert_eq!(tf.den.coeffs(), &[1.0, 2.0, 1.0]);
        assert_eq!(tf.num.coeffs(), &[1.0]);
    }

    #[test]
    fn single_cell_transfer_reads_off_parameters() {
        let cell = ContinuousCell::state_only(2.0, 3.0, 0.0, 5.0).unwrap();
        let tf = cascade_transfer(&CascadeSpec::new(vec![cell]).unwrap());
        assert_eq!(tf.den.coeffs(), &[3.0, 2.0]);
        assert_eq!(tf.num.coeffs(), &[5.0]);
    }

    #[test]
    fn denominator_at_zero_is_product_of_a() {
        // random-ish 4-cell spec with integer parameters
        let params = [(1.0, 2.0, 1.0), (2.0, 1.0, 3.0), (1.0, 4.0, 2.0), (3.0, 2.0, 1.0)];
        let cells = params
            .iter()
            .map(|&(c, g, b)| ContinuousCell::state_only(c, g, 0.0, b).unwrap())
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let tf = cascade_transfer(&spec);
        assert_eq!(tf.den.degree(), 4);
        let prod_a: f64 = spec.cells().iter().map(|c| c.a()).product();
        assert_eq!(tf.den.eval(0.0), prod_a);
    }

    #[test]
    fn ode_coeffs_match_transfer_and_first_order_case() {
        let (gamma, kappa) = cascade_ode_coeffs(&unit_cells(2));
        assert_eq!(gamma.coeffs(), &[1.0, 2.0, 1.0]);
        assert_eq!(kappa, 1.0);

        let cell = ContinuousCell::state_only(2.0, 3.0, 0.0, 5.0).unwrap();
        let (gamma, kappa) = cascade_ode_coeffs(&CascadeSpec::new(vec![cell]).unwrap());
        assert_eq!(gamma.coeffs(), &[3.0, 2.0]);
        assert_eq!(kappa, 5.0);
    }

    #[test]
    fn readout_collapses_to_state_transfer_without_skip() {
        // d_o = 0, c_o = 1: rhs = prod b_l
        let cells: Vec<_> = [(1.0, 2.0, 3.0), (2.0, 1.0, 4.0)]
            .iter()
            .map(|&(c, g, b)| ContinuousCell::new(c, g, 0.0, b, 1.0, 0.0).unwrap())
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let (lhs, rhs) = readout_cascade_operator(&spec);
        let tf = cascade_transfer(&spec);
        assert_eq!(rhs.coeffs(), tf.num.coeffs());
        assert_eq!(lhs.coeffs(), tf.den.coeffs());
    }

    #[test]
    fn readout_is_identity_with_pure_skip() {
        // d_o = 1, c_o = 0: rhs == lhs, i.e. y_n = u
        let cells: Vec<_> = [(1.0, 2.0, 3.0), (2.0, 1.0, 4.0), (1.5, 0.5, 2.0)]
            .iter()
            .map(|&(c, g, b)| ContinuousCell::new(c, g, 0.0, b, 0.0, 1.0).unwrap())
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let (lhs, rhs) = readout_cascade_operator(&spec);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn readout_degrees() {
        // deg(lhs) = n always; deg(rhs) = n iff all d_o != 0
        let mk = |d_o: f64| ContinuousCell::new(1.0, 1.0, 0.0, 1.0, 1.0, d_o).unwrap();
        let spec = CascadeSpec::new(vec![mk(1.0), mk(2.0), mk(0.5)]).unwrap();
        let (lhs, rhs) = readout_cascade_operator(&spec);
        assert_eq!(lhs.degree(), 3);
        assert_eq!(rhs.degree(), 3);

        let spec = CascadeSpec::new(vec![mk(1.0), mk(0.0), mk(0.5)]).unwrap();
        let (lhs, rhs) = readout_cascade_operator(&spec);
        assert_eq!(lhs.degree(), 3);
        assert!(rhs.degree() < 3);
    }

    #[test]
    fn cascade_poles_are_stable() {
        let params = [(1.0, 2.0, 1.0), (2.0, 1.0, 3.0), (1.0, 4.0, 2.0), (0.5, 3.0, 1.0), (2.0, 5.0, 2.0), (1.5, 1.0, 1.0)];
        let cells = params
            .iter()
            .map(|&(c, g, b)| ContinuousCell::state_only(c, g, 0.0, b).unwrap())
            .collect();
        let tf = cascade_transfer(&CascadeSpec::new(cells).unwrap());
        assert!(tf.is_stable());
    }

    #[test]
    fn erlang_first_order_is_exponential() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let h = erlang_kernel(1, 1.0, 1.0, 1.0, &t).unwrap();
        assert_eq!(h[0], 1.0);
        for (hi, ti) in h.iter().zip(&t) {
            assert!((hi - (-ti).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn erlang_higher_orders_vanish_at_origin() {
        for n in 2..=4 {
            let h = erlang_kernel(n, 1.0, 1.0, 1.0, &[0.0]).unwrap();
            assert_eq!(h[0], 0.0, "order {n}");
        }
    }

    #[test]
    fn erlang_negative_time_is_zero() {
        let h = erlang_kernel(2, 1.0, 1.0, 1.0, &[-1.0, 1.0]).unwrap();
        assert_eq!(h[0], 0.0);
        assert!(h[1] > 0.0);
    }

    #[test]
    fn erlang_order_two_closed_form_value() {
        // h_2(1) = e^{-1} for a = b = C = 1
        let h = erlang_kernel(2, 1.0, 1.0, 1.0, &[1.0]).unwrap();
        assert!((h[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn impulse_zero_steps_is_empty() {
        let spec = unit_cells(2);
        assert!(discrete_cascade_impulse(&spec, 0.01, 0).unwrap().is_empty());
    }

    #[test]
    fn impulse_first_order_tracks_exponential() {
        let spec = unit_cells(1);
        let dt = 0.001;
        let resp = discrete_cascade_impulse(&spec, dt, 2000).unwrap();
        let mut max_dev = 0.0f64;
        for (k, r) in resp.iter().enumerate() {
            let t = (k + 1) as f64 * dt;
            max_dev = max_dev.max((r - (-t).exp()).abs());
        }
        // O(dt) with constant ~ alpha/2
        assert!(max_dev < 1.0 * dt, "max deviation {max_dev} at dt {dt}");
    }
}
