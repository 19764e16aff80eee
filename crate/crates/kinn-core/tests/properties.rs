//! Property tests for the core numeric invariants.

use proptest::prelude::*;

use kinn_core::analytic::{convex_decomposition, zoh_step, CascadeSpec, ContinuousCell, Polynomial};
use kinn_core::knc::{selective_discretize, SelectiveKncParams};
use kinn_core::params::ParamTree;
use kinn_core::poisson::stream_rng;
use kinn_core::tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Retention stays strictly inside (0, 1) on the working sweep domain;
    /// far outside it the exponential may underflow to exactly zero but
    /// never leaves [0, 1).
    #[test]
    fn retention_in_unit_interval(
        alpha in 1e-3f64..20.0,
        dt in 1e-6f64..10.0,
        u in -10.0f64..10.0,
    ) {
        let (g, _) = convex_decomposition(alpha, 1.0, u, dt).unwrap();
        prop_assert!(g > 0.0 && g < 1.0);
    }

    #[test]
    fn retention_never_leaves_unit_interval_even_when_underflowing(
        alpha in 1.0f64..100.0,
        dt in 1.0f64..100.0,
    ) {
        let (g, _) = convex_decomposition(alpha, 1.0, 0.5, dt).unwrap();
        prop_assert!((0.0..1.0).contains(&g));
    }

    /// The convex recombination reproduces the ZOH update.
    #[test]
    fn convex_matches_zoh(
        alpha in 0.1f64..5.0,
        beta in -2.0f64..2.0,
        dt in 0.01f64..1.0,
        v in -3.0f64..3.0,
        u in -3.0f64..3.0,
    ) {
        let direct = zoh_step(alpha, beta, v, u, dt).unwrap();
        let (g, eq) = convex_decomposition(alpha, beta, u, dt).unwrap();
        let recombined = g * v + (1.0 - g) * eq;
        prop_assert!((direct - recombined).abs() <= 1e-14 * direct.abs().max(1e-300));
    }

    /// Polynomial convolution is commutative and degree-additive.
    #[test]
    fn polynomial_product_properties(
        a in prop::collection::vec(-5.0f64..5.0, 1..5),
        b in prop::collection::vec(-5.0f64..5.0, 1..5),
    ) {
        let pa = Polynomial::new(a);
        let pb = Polynomial::new(b);
        let ab = pa.mul(&pb);
        let ba = pb.mul(&pa);
        // commutative up to summation order (a few ulp)
        prop_assert_eq!(ab.coeffs().len(), ba.coeffs().len());
        for (x, y) in ab.coeffs().iter().zip(ba.coeffs()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
        }
        if !pa.is_zero() && !pb.is_zero() {
            prop_assert_eq!(ab.degree(), pa.degree() + pb.degree());
        }
        // evaluation is multiplicative
        let x = 0.7;
        prop_assert!((ab.eval(x) - pa.eval(x) * pb.eval(x)).abs() < 1e-9);
    }

    /// Cascade DC gain equals the product of stage gains.
    #[test]
    fn cascade_dc_gain_is_product(params in prop::collection::vec((0.5f64..2.0, 0.3f64..3.0, 0.5f64..2.0), 1..5)) {
        let cells: Vec<_> = params
            .iter()
            .map(|&(c, a, b)| ContinuousCell::state_only(c, a, 0.0, b).unwrap())
            .collect();
        let spec = CascadeSpec::new(cells).unwrap();
        let tf = kinn_core::analytic::cascade_transfer(&spec);
        let expect: f64 = params.iter().map(|&(_, a, b)| b / a).product();
        prop_assert!((tf.dc_gain() - expect).abs() / expect.abs() < 1e-12);
    }

    /// Selective retention is always in (0, 1] regardless of inputs.
    #[test]
    fn selective_retention_bounded(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let p = SelectiveKncParams::<f64>::init(&mut stream_rng(seed, 0), 4, 3);
        let u = Tensor::uniform(&mut stream_rng(seed, 1), &[3, 4], -scale, scale);
        let (abar, _, _, _) = selective_discretize(&p, &u).unwrap();
        prop_assert!(abar.data().iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    /// Checkpoint encoding round-trips bit-exactly, including extreme values.
    #[test]
    fn param_tree_roundtrip(values in prop::collection::vec(-1e300f64..1e300, 1..20)) {
        let n = values.len();
        let tree = ParamTree::from_entries(vec![(
            "blob".to_string(),
            Tensor::from_vec(&[n], values).unwrap(),
        )])
        .unwrap();
        let back = ParamTree::<f64>::from_bytes(&tree.to_bytes()).unwrap();
        prop_assert_eq!(tree, back);
    }
}
