use proptest::prelude::*;
use twopoint::model::{baxendale_constants, baxendale_valid, build_builtin, make_double_well, Params, BUILTINS};

#[test]
fn analytic_derivatives_of_every_builtin_match_differences() {
    for b in BUILTINS {
        let m = build_builtin(b.name, &Params::new()).unwrap();
        if !m.has_analytic_jacobian() {
            continue;
        }
        let worst = m.derivative_discrepancy(100, 3.0, 17);
        assert!(worst < 1e-5, "{}: {worst:e}", b.name);
    }
}

proptest! {
    #[test]
    fn double_well_drift_is_radial_gradient(x in prop::collection::vec(-3.0f64..3.0, 1..5)) {
        let m = make_double_well(0.8, x.len()).unwrap();
        let b = m.drift(&x);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let inner: f64 = b.iter().zip(&x).map(|(p, q)| p * q).sum();
        prop_assert!((inner + r2 * (r2 - 1.0)).abs() <= 1e-12 * (1.0 + r2 * r2));
    }
}

/// Triples with `ab < 0`, `a + b < 0` and `σ` above the threshold.
fn valid_triple() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.01f64..3.0, 0.01f64..3.0, any::<bool>(), 0.01f64..4.0).prop_map(|(pos, extra, swap, ds)| {
        let neg = -(pos + extra);
        let (a, b) = if swap { (neg, pos) } else { (pos, neg) };
        let sigma = (2.0 * a * b / (a + b)).sqrt() + ds;
        (a, b, sigma)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn baxendale_metadata_in_range((a, b, sigma) in valid_triple()) {
        prop_assert!(baxendale_valid(a, b, sigma).is_ok());
        let (lambda, alpha) = baxendale_constants(a, b, sigma);
        prop_assert!(lambda > 0.0 && lambda < 1.0, "lambda {} at a={} b={} sigma={}", lambda, a, b, sigma);
        prop_assert!(alpha > 0.0, "alpha {}", alpha);
    }

    // λ < 1 exactly when b < a; the sign pattern a < 0 < b is admissible and gives λ > 1.
    #[test]
    fn baxendale_lambda_below_one_iff_b_below_a((a, b, sigma) in valid_triple()) {
        prop_assert!(baxendale_valid(a, b, sigma).is_ok());
        let (lambda, alpha) = baxendale_constants(a, b, sigma);
        prop_assert!(lambda > 0.0 && alpha > 0.0);
        prop_assert_eq!(lambda < 1.0, b < a);
    }
}
