use std::sync::Arc;

use twopoint::harness::clt::{predicted_variance, run_clt_study, CltConfig, CltReport, Mode};
use twopoint::model::make_ou;
use twopoint::schedule::CorrelationSpec;

/// OU (σ = 1), f = x², Poisson solution g = -x²/2 so σᵀ∇g = -x.
fn study(rho: f64, mu: f64, n: u64, reps: usize, seed: u64) -> CltReport {
    let ou = make_ou(1.0).unwrap();
    let mut c = CltConfig::new(ou, Arc::new(|x: &[f64]| x[0] * x[0]), 0.5);
    c.mode = Mode::Rr;
    c.mu = mu;
    c.n_ladder = vec![n];
    c.replications = reps;
    c.seed = seed;
    c.rho = CorrelationSpec::scalar(1, rho).unwrap();
    c.sigma_grad_g = Some(Arc::new(|x: &[f64]| vec![-x[0]]));
    run_clt_study(&c).unwrap()
}

#[test]
fn shared_noise_prediction_agrees_with_quadrature() {
    let r = study(1.0, 0.5, 100_000, 20, 3);
    let m = r.marginal_term.unwrap();
    let c = r.cross_term.unwrap();
    // ν(|σᵀ∇g|²) = ν(x²) = 1/2.
    assert!((m - 0.5).abs() < 0.02, "{m}");
    assert!((predicted_variance(m, c) - r.predicted_variance.unwrap()).abs() < 1e-15);
    assert!((r.predicted_variance.unwrap() - 0.5).abs() < 0.03, "m {m} c {c}");
}

#[test]
fn independent_noise_inflates_the_variance() {
    let shared = study(1.0, 0.2, 10_000, 1000, 11).rungs[0].var_norm_err;
    let indep = study(0.0, 0.2, 10_000, 1000, 11).rungs[0].var_norm_err;
    let ratio = indep / shared;
    assert!((3.5..=6.5).contains(&ratio), "{indep} / {shared} = {ratio}");
}

#[test]
fn no_correlation_beats_shared_noise() {
    let base = study(1.0, 0.2, 20_000, 20, 5);
    let floor = base.marginal_term.unwrap();
    for rho in [0.5, 0.0, -0.5, -1.0] {
        let v = study(rho, 0.2, 20_000, 20, 5).predicted_variance.unwrap();
        assert!(v >= floor * 0.95, "rho={rho}: {v} < {floor}");
    }
}
