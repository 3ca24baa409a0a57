use proptest::prelude::*;
use twopoint::confluence::diagonal::{diagonal_nils, generalized_min_eigen};
use twopoint::confluence::nils::nils;
use twopoint::confluence::{psi, scale_speed_1d, MetricS, ThetaFunction};
use twopoint::linalg::Matrix;
use twopoint::model::{make_baxendale, make_double_well, make_kolmogorov_poly, make_ou};

fn pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-2.5f64..2.5, d), prop::collection::vec(-2.5f64..2.5, d))
}

proptest! {
    #[test]
    fn nils_is_symmetric((x, y) in pair(2)) {
        let bax = make_baxendale(1.0, -2.0, 3.0, 0.3, -0.2).unwrap();
        let s = MetricS::new(Matrix::diag(&[1.0, 0.4])).unwrap();
        prop_assume!(!s.is_near_diagonal(&x, &y));
        prop_assert_eq!(nils(&bax, &s, &x, &y).unwrap(), nils(&bax, &s, &y, &x).unwrap());
        let dw = make_double_well(0.9, 2).unwrap();
        let id = MetricS::identity(2);
        prop_assert_eq!(nils(&dw, &id, &x, &y).unwrap(), nils(&dw, &id, &y, &x).unwrap());
    }

    #[test]
    fn identity_theta_links_psi_and_nils((x, y) in pair(3)) {
        let dw = make_double_well(1.2, 3).unwrap();
        let s = MetricS::new(Matrix::diag(&[2.0, 1.0, 0.5])).unwrap();
        prop_assume!(!s.is_near_diagonal(&x, &y));
        let theta = ThetaFunction::constant(1.0).unwrap();
        let p = psi(&dw, &s, &theta, &x, &y).unwrap();
        let l = nils(&dw, &s, &x, &y).unwrap() * s.distance(&x, &y).powi(2);
        prop_assert!((p - l).abs() <= 1e-12 * (1.0 + l.abs()));
    }
}

#[test]
fn scale_function_is_strictly_increasing() {
    for m in [make_ou(0.7).unwrap(), make_kolmogorov_poly(-1.0, 1.0, 1.0).unwrap()] {
        let t = scale_speed_1d(&m, 0.0, (-2.5, 2.5)).unwrap();
        assert!(t.p.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn constant_sigma_diagonal_is_half_generalized_eigenvalue() {
    let m = make_double_well(0.8, 3).unwrap();
    let s = MetricS::new(Matrix::from_rows(&[vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.1, 0.7]]).unwrap()).unwrap();
    for x in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.3], [-2.0, 1.0, 1.0]] {
        let got = diagonal_nils(&m, &s, &x).unwrap().value;
        let want = generalized_min_eigen(&m, &s, &x).unwrap();
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}
