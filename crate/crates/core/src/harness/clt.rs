//! Replicated CLT studies of the crude decreasing-step estimator `ν_n(f)`
//! and the Richardson-Romberg estimator `2ν_n^{(ρ)}(f) - ν_n(f)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confluence::MetricS;
use crate::empirical::{CouplingMeasure, WeightedEmpiricalMeasure};
use crate::engine::{PairState, PairStepper, Stepper};
use crate::linalg::Matrix;
use crate::model::{Model, ScalarField};
use crate::schedule::{CorrelationSpec, NoiseKind, NoiseStream, StepSchedule, WeightScheme};
use crate::{Error, Result};

/// `x ↦ σᵀ(x)∇g(x) ∈ ℝ^q`.
pub type GradientField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Fraction of diverged replications above which the report warns.
pub const DIVERGENCE_WARN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Crude,
    Rr,
}

impl Mode {
    /// Power `r` of the bias normalization `Γ_n / Γ_n^{(r)}`.
    pub fn bias_power(self) -> u32 {
        match self {
            Mode::Crude => 2,
            Mode::Rr => 3,
        }
    }
}

#[derive(Clone)]
pub struct CltConfig {
    pub model: Model,
    pub f: ScalarField,
    pub f_label: String,
    pub nu_f: f64,
    pub mu: f64,
    pub c: f64,
    pub n_ladder: Vec<u64>,
    pub replications: usize,
    pub rho: CorrelationSpec,
    pub mode: Mode,
    pub seed: u64,
    pub x0: Vec<f64>,
    /// Start of the half-step scheme; `x0` when absent.
    pub y0: Option<Vec<f64>>,
    pub weights: WeightScheme,
    pub noise: NoiseKind,
    /// Enables the variance prediction.
    pub sigma_grad_g: Option<GradientField>,
    pub threads: Option<usize>,
}

impl CltConfig {
    pub fn new(model: Model, f: ScalarField, nu_f: f64) -> Self {
        let q = model.q();
        let d = model.d();
        CltConfig {
            model,
            f,
            f_label: "f".into(),
            nu_f,
            mu: 0.5,
            c: 1.0,
            n_ladder: vec![1000],
            replications: 100,
            rho: CorrelationSpec::scalar(q, 1.0).expect("identity is admissible"),
            mode: Mode::Crude,
            seed: 0,
            x0: vec![0.0; d],
            y0: None,
            weights: WeightScheme::Step,
            noise: NoiseKind::Gaussian,
            sigma_grad_g: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        StepSchedule::new(self.c, self.mu)?;
        if self.n_ladder.is_empty() || self.n_ladder[0] == 0 || self.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("n_ladder", "must be a non-empty strictly increasing list of positive step counts"));
        }
        if self.replications < 2 {
            return Err(Error::param("replications", "need at least 2"));
        }
        if self.x0.len() != self.model.d() || self.y0.as_ref().is_some_and(|y| y.len() != self.model.d()) {
            return Err(Error::Dimension(format!("start points must have length {}", self.model.d())));
        }
        if self.rho.q() != self.model.q() {
            return Err(Error::Dimension(format!("rho must be {0} x {0}", self.model.q())));
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct Replication {
    estimates: Vec<f64>,
    marginal: f64,
    cross: f64,
    diverged_at: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RungStats {
    pub n: u64,
    pub gamma_n: f64,
    /// `Γ_n^{(r)}` with `r = 2` (crude) or `3` (rr).
    pub gamma_n_r: f64,
    pub mean_err: f64,
    pub median_abs_err: f64,
    /// Variance of `√Γ_n (estimator - ν(f))` across replications.
    pub var_norm_err: f64,
    /// Normal-theory standard error of that variance.
    pub var_norm_se: f64,
    /// `Γ_n / Γ_n^{(r)} (estimator - ν(f))`: mean, its standard error, median.
    pub bias_norm_mean: f64,
    pub bias_norm_se: f64,
    pub bias_norm_median: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub mode: Mode,
    pub f: String,
    pub nu_f: f64,
    pub mu: f64,
    pub c: f64,
    pub rho: Matrix,
    pub seed: u64,
    pub replications: usize,
    pub used_replications: usize,
    pub diverged: usize,
    pub rungs: Vec<RungStats>,
    /// Least-squares slope of `ln median|error|` against `ln n`.
    pub slope: Option<f64>,
    /// `∫|σᵀ∇g|² dν` from the second half of each run, averaged.
    pub marginal_term: Option<f64>,
    /// `∫⟨σᵀ∇g(x), ρ σᵀ∇g(y)⟩ dμ^{(ρ)}` (rr only).
    pub cross_term: Option<f64>,
    /// Predicted limit variance of `√Γ_n (estimator - ν(f))`.
    pub predicted_variance: Option<f64>,
    pub m_g1: Option<f64>,
    pub m_g2: Option<f64>,
    /// Uniqueness of `μ^{(ρ)}` is assumed, not checked.
    pub assumed_unique: bool,
    pub warnings: Vec<String>,
    /// Estimator values at the last rung, by replication index (`None`
    /// when the replication diverged).
    pub terminal_values: Vec<Option<f64>>,
}

/// `σ̂²_ρ = 5 ∫|σᵀ∇g|² dν - 4 ∫⟨σᵀ∇g(x), ρ σᵀ∇g(y)⟩ μ^{(ρ)}(dx, dy)`.
pub fn predicted_variance(marginal_term: f64, cross_term: f64) -> f64 {
    5.0 * marginal_term - 4.0 * cross_term
}

/// Register `|σᵀ∇g|²` on `nu` and the ρ-cross term on `coupling`, returning
/// their indices.
pub fn register_variance_terms(
    grad: &GradientField,
    rho: &CorrelationSpec,
    nu: &mut WeightedEmpiricalMeasure,
    coupling: &mut CouplingMeasure,
) -> (usize, usize) {
    let g1 = grad.clone();
    let i = nu.register("sigma_grad_g_sq", move |x| g1(x).iter().map(|v| v * v).sum());
    let g2 = grad.clone();
    let r = rho.rho().clone();
    let j = coupling.register("cross", move |x, y| {
        let a = g2(x);
        let b = r.mul_vec(&g2(y));
        a.iter().zip(&b).map(|(p, q)| p * q).sum()
    });
    (i, j)
}

fn run_one(cfg: &CltConfig, rep: usize) -> Replication {
    let model = &cfg.model;
    let d = model.d();
    let mut stream = NoiseStream::new(cfg.seed, rep as u64, cfg.noise);
    let mut sched = StepSchedule::new(cfg.c, cfg.mu).expect("validated");
    let nmax = *cfg.n_ladder.last().unwrap();
    let burn = nmax / 2;
    let mut out = Replication {
        estimates: Vec::with_capacity(cfg.n_ladder.len()),
        ..Default::default()
    };
    let mut full = WeightedEmpiricalMeasure::new(d);
    let fi = full.register_shared(cfg.f_label.clone(), cfg.f.clone());
    let mut half = WeightedEmpiricalMeasure::new(d);
    half.register_shared(cfg.f_label.clone(), cfg.f.clone());
    let mut marg = WeightedEmpiricalMeasure::new(d);
    let mut coup = CouplingMeasure::new(MetricS::identity(d));
    let terms = cfg
        .sigma_grad_g
        .as_ref()
        .map(|g| register_variance_terms(g, &cfg.rho, &mut marg, &mut coup));
    let mut rung = 0;
    match cfg.mode {
        Mode::Crude => {
            let mut stepper = Stepper::new(model);
            let mut x = cfg.x0.clone();
            let mut z = vec![0.0; model.q()];
            for k in 1..=nmax {
                let g = sched.advance();
                let w = cfg.weights.weight(g);
                full.update(w, &x);
                if terms.is_some() && k > burn {
                    marg.update(w, &x);
                }
                stream.fill(&mut z);
                if let Err(Error::Divergence { step }) = stepper.step(model, &mut x, g, &z, k) {
                    out.diverged_at = Some(step);
                    return out;
                }
                if k == cfg.n_ladder[rung] {
                    out.estimates.push(full.integrate(fi));
                    rung += 1;
                }
            }
        }
        Mode::Rr => {
            let mut stepper = PairStepper::new(model);
            let mut st = PairState::with_starts(&cfg.x0, cfg.y0.as_deref().unwrap_or(&cfg.x0));
            for k in 1..=nmax {
                let g = sched.advance();
                let w = cfg.weights.weight(g);
                full.update(w, &st.x);
                half.update(0.5 * w, &st.y);
                if terms.is_some() && k > burn {
                    marg.update(w, &st.x);
                    coup.update(w, &st.x, &st.y);
                }
                if let Err(Error::Divergence { step }) = stepper.advance(model, &mut st, g, &cfg.rho, &mut stream) {
                    out.diverged_at = Some(step);
                    return out;
                }
                half.update(0.5 * w, &st.y_mid);
                if k == cfg.n_ladder[rung] {
                    out.estimates.push(2.0 * half.integrate(fi) - full.integrate(fi));
                    rung += 1;
                }
            }
        }
    }
    if let Some((i, j)) = terms {
        out.marginal = marg.integrate(i);
        if cfg.mode == Mode::Rr {
            out.cross = coup.integrate(j);
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn run_clt_study(cfg: &CltConfig) -> Result<CltReport> {
    cfg.validate()?;
    let reps: Vec<Replication> = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Solver(format!("thread pool: {e}")))?
            .install(|| (0..cfg.replications).into_par_iter().map(|r| run_one(cfg, r)).collect()),
        None => (0..cfg.replications).into_par_iter().map(|r| run_one(cfg, r)).collect(),
    };
    let ok: Vec<&Replication> = reps.iter().filter(|r| r.diverged_at.is_none()).collect();
    let diverged = reps.len() - ok.len();
    let mut warnings = Vec::new();
    if diverged as f64 > DIVERGENCE_WARN * reps.len() as f64 {
        warnings.push(format!("{diverged} of {} replications diverged and were excluded", reps.len()));
    }
    if ok.len() < 2 {
        return Err(Error::Divergence {
            step: reps.iter().filter_map(|r| r.diverged_at).min().unwrap_or(0),
        });
    }

    // Deterministic Γ_n and Γ_n^{(r)} at the rungs.
    let r = cfg.mode.bias_power();
    let mut sched = StepSchedule::new(cfg.c, cfg.mu)?;
    let mut gammas = Vec::with_capacity(cfg.n_ladder.len());
    for &n in &cfg.n_ladder {
        while sched.n() < n {
            sched.advance();
        }
        gammas.push((sched.big_gamma(), sched.big_gamma_pow(r).expect("r is 2 or 3")));
    }

    let mut rungs = Vec::with_capacity(cfg.n_ladder.len());
    for (k, &n) in cfg.n_ladder.iter().enumerate() {
        let (gn, gr) = gammas[k];
        let errs: Vec<f64> = ok.iter().map(|rep| rep.estimates[k] - cfg.nu_f).collect();
        let norm: Vec<f64> = errs.iter().map(|e| gn.sqrt() * e).collect();
        let bias: Vec<f64> = errs.iter().map(|e| gn / gr * e).collect();
        let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
        let m = errs.len() as f64;
        let vn = variance(&norm);
        rungs.push(RungStats {
            n,
            gamma_n: gn,
            gamma_n_r: gr,
            mean_err: mean(&errs),
            median_abs_err: median(&abs),
            var_norm_err: vn,
            var_norm_se: vn * (2.0 / (m - 1.0)).sqrt(),
            bias_norm_mean: mean(&bias),
            bias_norm_se: (variance(&bias) / m).sqrt(),
            bias_norm_median: median(&bias),
        });
    }
    let slope = (rungs.len() >= 2).then(|| {
        let x: Vec<f64> = rungs.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rungs.iter().map(|r| r.median_abs_err.ln()).collect();
        ls_slope(&x, &y)
    });
    let (marginal_term, cross_term, predicted) = if cfg.sigma_grad_g.is_some() {
        let mt = mean(&ok.iter().map(|r| r.marginal).collect::<Vec<_>>());
        match cfg.mode {
            Mode::Crude => (Some(mt), None, Some(mt)),
            Mode::Rr => {
                let ct = mean(&ok.iter().map(|r| r.cross).collect::<Vec<_>>());
                (Some(mt), Some(ct), Some(predicted_variance(mt, ct)))
            }
        }
    } else {
        (None, None, None)
    };
    Ok(CltReport {
        mode: cfg.mode,
        f: cfg.f_label.clone(),
        nu_f: cfg.nu_f,
        mu: cfg.mu,
        c: cfg.c,
        rho: cfg.rho.rho().clone(),
        seed: cfg.seed,
        replications: cfg.replications,
        used_replications: ok.len(),
        diverged,
        rungs,
        slope,
        marginal_term,
        cross_term,
        predicted_variance: predicted,
        m_g1: None,
        m_g2: None,
        assumed_unique: cfg.mode == Mode::Rr && !cfg.rho.is_identity(),
        warnings,
        terminal_values: reps.iter().map(|r| r.estimates.last().copied().filter(|_| r.diverged_at.is_none())).collect(),
    })
}

/// Rung table rows `(n, Γ_n, Γ_n^{(r)}, mean_err, var_norm_err, slope)`.
pub fn rung_rows(report: &CltReport) -> Vec<[f64; 6]> {
    report
        .rungs
        .iter()
        .map(|r| [r.n as f64, r.gamma_n, r.gamma_n_r, r.mean_err, r.var_norm_err, report.slope.unwrap_or(f64::NAN)])
        .collect()
}

/// Generator `A V(x) = ⟨b, ∇V⟩ + ½ Tr(σσᵀ D²V)` by central differences, for
/// eyeballing mean reversion of a candidate Lyapunov function.
pub fn generator_apply(model: &Model, v: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    let d = model.d();
    let b = model.drift(x);
    let s = model.diffusion(x);
    let a = s.mul(&s.transpose());
    let h: Vec<f64> = x.iter().map(|t| f64::EPSILON.powf(0.25) * t.abs().max(1.0)).collect();
    let at = |dx: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, e) in dx {
            y[i] += e;
        }
        v(&y)
    };
    let v0 = v(x);
    let mut out = 0.0;
    for i in 0..d {
        let grad = (at(&[(i, h[i])]) - at(&[(i, -h[i])])) / (2.0 * h[i]);
        out += b[i] * grad;
        for j in 0..d {
            let hess = if i == j {
                (at(&[(i, h[i])]) - 2.0 * v0 + at(&[(i, -h[i])])) / (h[i] * h[i])
            } else {
                (at(&[(i, h[i]), (j, h[j])]) - at(&[(i, h[i]), (j, -h[j])]) - at(&[(i, -h[i]), (j, h[j])])
                    + at(&[(i, -h[i]), (j, -h[j])]))
                    / (4.0 * h[i] * h[j])
            };
            out += 0.5 * a[(i, j)] * hess;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ou;

    fn ou_cfg(mode: Mode) -> CltConfig {
        let ou = make_ou(1.0).unwrap();
        let mut c = CltConfig::new(ou, Arc::new(|x: &[f64]| x[0]), 0.0);
        c.mode = mode;
        c.mu = 0.3;
        c.n_ladder = vec![100, 1000];
        c.replications = 40;
        c.seed = 9;
        c.sigma_grad_g = Some(Arc::new(|_: &[f64]| vec![-1.0]));
        c
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = run_clt_study(&ou_cfg(Mode::Rr)).unwrap();
        let b = run_clt_study(&ou_cfg(Mode::Rr)).unwrap();
        assert_eq!(a.terminal_values, b.terminal_values);
        assert_eq!(a.rungs.len(), 2);
        assert_eq!(a.predicted_variance, Some(1.0));
        let c = run_clt_study(&ou_cfg(Mode::Crude)).unwrap();
        assert_eq!(c.predicted_variance, Some(1.0));
        assert!(c.rungs[1].gamma_n > c.rungs[0].gamma_n);
    }

    #[test]
    fn independent_noise_prediction_is_five() {
        let mut c = ou_cfg(Mode::Rr);
        c.rho = CorrelationSpec::scalar(1, 0.0).unwrap();
        let r = run_clt_study(&c).unwrap();
        assert_eq!(r.predicted_variance, Some(5.0));
        assert!(r.assumed_unique);
    }

    #[test]
    fn validation() {
        let mut c = ou_cfg(Mode::Crude);
        c.n_ladder = vec![10, 10];
        assert!(run_clt_study(&c).is_err());
        c.n_ladder = vec![10];
        c.mu = 1.5;
        assert!(run_clt_study(&c).is_err());
    }

    #[test]
    fn generator_of_quadratic() {
        // A x² = -2x² + σ² for OU.
        let ou = make_ou(1.5).unwrap();
        let v = |x: &[f64]| x[0] * x[0];
        assert!((generator_apply(&ou, &v, &[0.8]) - (-2.0 * 0.64 + 2.25)).abs() < 1e-6);
    }
}
