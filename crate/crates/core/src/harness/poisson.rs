//! One-dimensional Poisson equation `A g = f - ν(f)` and the bias constants
//! `m_g^{(1)}`, `m_g^{(2)}`.

use std::sync::Arc;

use serde::Serialize;

use crate::harness::chebyshev::{lobatto_points, Chebyshev};
use crate::harness::isserlis::{phi1, phi2, DerivativeTensors};
use crate::model::{KnownPoisson, Model};
use crate::quadrature::integrate_rel;
use crate::{Error, Result};

pub const RESIDUAL_TOL: f64 = 1e-6;
pub const MAX_DERIVATIVE: usize = 6;

/// Lobatto degree for the `g'` series.
const G_DEGREE: usize = 160;
/// Lobatto degree for the log scale rate `s = ∫ 2b/σ²`.
const S_DEGREE: usize = 256;
const REL: f64 = 1e-13;

pub type Target = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Solution {
    Known(crate::model::Derivatives1d),
    /// `g'` and its first five derivatives, and `g` itself.
    Series { g: Chebyshev, derivs: Vec<Chebyshev> },
}

/// `f`, `ν(f)` and `g` with derivatives up to order 6 on a range.
#[derive(Clone)]
pub struct PoissonData {
    pub label: String,
    pub nu_f: f64,
    pub range: (f64, f64),
    /// Largest generator residual on the probe grid.
    pub max_residual: f64,
    /// `(x, residual)` on the probe grid.
    pub residual_profile: Vec<(f64, f64)>,
    f: Target,
    g: Solution,
    /// Unnormalized log invariant density.
    log_density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    log_z: f64,
}

impl std::fmt::Debug for PoissonData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonData")
            .field("label", &self.label)
            .field("nu_f", &self.nu_f)
            .field("range", &self.range)
            .field("max_residual", &self.max_residual)
            .finish()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PoissonSummary {
    pub label: String,
    pub nu_f: f64,
    pub range: (f64, f64),
    pub max_residual: f64,
}

fn coefficients(model: &Model, x: f64) -> (f64, f64) {
    let mut b = [0.0];
    let mut s = [0.0];
    model.drift_into(&[x], &mut b);
    model.diffusion_into(&[x], &mut s);
    (b[0], s[0] * s[0])
}

fn check_1d(model: &Model) -> Result<()> {
    if model.d() != 1 || model.q() != 1 {
        return Err(Error::Dimension("the Poisson solver is one-dimensional (d = q = 1)".into()));
    }
    Ok(())
}

fn log_normalizer(logp: &(dyn Fn(f64) -> f64 + Send + Sync), lo: f64, hi: f64) -> Result<f64> {
    let grid = lobatto_points(lo, hi, 64);
    let top = grid.iter().map(|&x| logp(x)).fold(f64::NEG_INFINITY, f64::max);
    let z = integrate_rel(|x| (logp(x) - top).exp(), lo, hi, REL, 1e-300)?;
    Ok(top + z.ln())
}

fn residuals(model: &Model, grid: usize, range: (f64, f64), f: &Target, nu_f: f64, d1: &dyn Fn(f64) -> f64, d2: &dyn Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let (lo, hi) = range;
    (1..grid)
        .map(|k| {
            let x = lo + (hi - lo) * k as f64 / grid as f64;
            let (b, s2) = coefficients(model, x);
            (x, 0.5 * s2 * d2(x) + b * d1(x) - (f(x) - nu_f))
        })
        .collect()
}

impl PoissonData {
    /// Wrap a closed-form pair, checking its residual on the probe grid.
    pub fn from_known(model: &Model, known: &KnownPoisson, range: (f64, f64), grid: usize) -> Result<Self> {
        check_1d(model)?;
        let log_density: Arc<dyn Fn(f64) -> f64 + Send + Sync> = match &model.info.log_density {
            Some(ld) => {
                let ld = ld.clone();
                Arc::new(move |x| ld(&[x]))
            }
            None => return Err(Error::Unavailable("model has no invariant density".into())),
        };
        let kf = known.f.clone();
        let f: Target = Arc::new(move |x| kf(x, 0));
        let g = known.g.clone();
        let (g1, g2) = (g.clone(), g.clone());
        let profile = residuals(model, grid, range, &f, known.nu_f, &move |x| g1(x, 1), &move |x| g2(x, 2));
        let log_z = log_normalizer(log_density.as_ref(), range.0, range.1)?;
        Self::finish(PoissonData {
            label: known.label.clone(),
            nu_f: known.nu_f,
            range,
            max_residual: 0.0,
            residual_profile: profile,
            f,
            g: Solution::Known(g),
            log_density,
            log_z,
        })
    }

    fn finish(mut self) -> Result<Self> {
        self.max_residual = self.residual_profile.iter().fold(0.0f64, |m, r| m.max(r.1.abs()));
        if !(self.max_residual <= RESIDUAL_TOL) {
            let worst = self
                .residual_profile
                .iter()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map_or(f64::NAN, |r| r.0);
            return Err(Error::PoissonResidual {
                max_residual: self.max_residual,
                tolerance: RESIDUAL_TOL,
                worst_x: worst,
                profile: self.residual_profile.clone(),
            });
        }
        Ok(self)
    }

    pub fn summary(&self) -> PoissonSummary {
        PoissonSummary {
            label: self.label.clone(),
            nu_f: self.nu_f,
            range: self.range,
            max_residual: self.max_residual,
        }
    }

    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// `g^{(k)}(x)`, `k ≤ 6`.
    pub fn derivative(&self, x: f64, k: usize) -> Result<f64> {
        if k > MAX_DERIVATIVE {
            return Err(Error::Unavailable(format!("derivative of order {k}")));
        }
        Ok(match &self.g {
            Solution::Known(g) => g(x, k),
            Solution::Series { g, derivs } => {
                if k == 0 {
                    g.eval(x)
                } else {
                    derivs[k - 1].eval(x)
                }
            }
        })
    }

    /// Normalized invariant density on the range.
    pub fn density(&self, x: f64) -> f64 {
        ((self.log_density)(x) - self.log_z).exp()
    }

    /// `∫ φ dν` over the range, with `ν` renormalized to it.
    pub fn nu_integral(&self, mut phi: impl FnMut(f64) -> f64) -> Result<f64> {
        integrate_rel(|x| phi(x) * self.density(x), self.range.0, self.range.1, 1e-12, 1e-300)
    }
}

impl DerivativeTensors for PoissonData {
    fn dim(&self) -> usize {
        1
    }
    fn max_order(&self) -> usize {
        MAX_DERIVATIVE
    }
    fn tensor(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        Ok(vec![self.derivative(x[0], k)?])
    }
}

/// Solve `(σ²/2) g'' + b g' = f - ν(f)` on `range`.
///
/// With `s = ∫ 2b/σ²` the invariant density is `∝ e^{s}/σ²` and
/// `g'(x) = 2 e^{-s(x)} ∫_{lo}^{x} (f - ν(f)) e^{s}/σ² dy`. Left of the
/// median the integral runs from the left end, right of it from the right
/// end (with the opposite sign), so neither tail divides a cancellation by a
/// vanishing density. Integrals run over the range widened by half its
/// width on each side when the coefficients allow, which keeps truncation
/// out of the represented `g`.
pub fn poisson_solve_1d(model: &Model, f: Target, range: (f64, f64), grid: usize) -> Result<PoissonData> {
    poisson_solve_labeled(model, f, "f", range, grid)
}

pub fn poisson_solve_labeled(model: &Model, f: Target, label: &str, range: (f64, f64), grid: usize) -> Result<PoissonData> {
    check_1d(model)?;
    let (lo, hi) = range;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::param("range", "need finite lo < hi"));
    }
    if grid < 4 {
        return Err(Error::param("grid", "need at least 4 probe points"));
    }
    let rate = |x: f64| {
        let (b, s2) = coefficients(model, x);
        2.0 * b / s2
    };
    let width = hi - lo;
    let widen = |w: f64| {
        let (a, b) = (lo - w, hi + w);
        lobatto_points(a, b, S_DEGREE).iter().all(|&x| rate(x).is_finite() && f(x).is_finite())
    };
    let ext = [0.5 * width, 0.25 * width, 0.0].into_iter().find(|&w| widen(w)).unwrap();
    let (elo, ehi) = (lo - ext, hi + ext);
    if let Some(x) = lobatto_points(elo, ehi, S_DEGREE).into_iter().find(|&x| !rate(x).is_finite()) {
        return Err(Error::Quadrature(format!("2b/sigma^2 is not finite at x = {x}")));
    }
    let mid = 0.5 * (lo + hi);
    let s = Chebyshev::interpolate(elo, ehi, S_DEGREE, rate).integral(mid);
    let sigma2 = move |x: f64| coefficients(model, x).1;
    let log_w = |y: f64| s.eval(y) - sigma2(y).ln();

    // ν(f) over the widened range.
    let top = lobatto_points(elo, ehi, 64).iter().map(|&x| log_w(x)).fold(f64::NEG_INFINITY, f64::max);
    let z = integrate_rel(|y| (log_w(y) - top).exp(), elo, ehi, REL, 1e-300)?;
    let fz = integrate_rel(|y| f(y) * (log_w(y) - top).exp(), elo, ehi, REL, 1e-300)?;
    let nu_f = fz / z;

    // Median of the density, where the integration side switches.
    let mut a = elo;
    let mut b = ehi;
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        let left = integrate_rel(|y| (log_w(y) - top).exp(), elo, m, 1e-10, 1e-300)?;
        if left < 0.5 * z {
            a = m;
        } else {
            b = m;
        }
    }
    let median = 0.5 * (a + b);

    let g_prime_at = |x: f64| -> Result<f64> {
        let sx = s.eval(x);
        let h = |y: f64| (f(y) - nu_f) * (s.eval(y) - sx).exp() / sigma2(y);
        let i = if x <= median {
            integrate_rel(h, elo, x, REL, 1e-300)?
        } else {
            -integrate_rel(h, x, ehi, REL, 1e-300)?
        };
        Ok(2.0 * i)
    };
    let values = lobatto_points(lo, hi, G_DEGREE)
        .into_iter()
        .map(g_prime_at)
        .collect::<Result<Vec<_>>>()?;
    let gp = Chebyshev::from_values(lo, hi, &values).chop(1e-14);
    let mut derivs = vec![gp.clone()];
    for _ in 1..MAX_DERIVATIVE {
        let next = derivs.last().unwrap().derivative();
        derivs.push(next);
    }
    let g = gp.integral(mid);
    let profile = residuals(model, grid, range, &f, nu_f, &|x| derivs[0].eval(x), &|x| derivs[1].eval(x));
    let log_density: Arc<dyn Fn(f64) -> f64 + Send + Sync> = {
        let m = model.clone();
        let s = s.clone();
        Arc::new(move |y| s.eval(y) - coefficients(&m, y).1.ln())
    };
    let log_z = log_normalizer(log_density.as_ref(), lo, hi)?;
    PoissonData {
        label: label.to_string(),
        nu_f,
        range,
        max_residual: 0.0,
        residual_profile: profile,
        f,
        g: Solution::Series { g, derivs },
        log_density,
        log_z,
    }
    .finish()
}

/// `m_g^{(1)} = ∫ φ₁ dν`.
pub fn m_g1(model: &Model, poisson: &PoissonData) -> Result<f64> {
    let mut err = None;
    let v = poisson.nu_integral(|x| match phi1(model, poisson, &[x]) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    match err {
        Some(e) => Err(e),
        None => v,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasConstants {
    pub m_g1: f64,
    /// `m_{g_{φ₁}}`, from a second Poisson solve with `φ₁` as target.
    pub m_g_phi1: f64,
    pub phi2_integral: f64,
    pub m_g2: f64,
}

/// `m_g^{(1)}` and `m_g^{(2)} = ½ (m_{g_{φ₁}} + ∫ φ₂ dν)`.
pub fn bias_constants(model: &Model, poisson: &PoissonData, grid: usize) -> Result<BiasConstants> {
    let m1 = m_g1(model, poisson)?;
    let m = model.clone();
    let p = poisson.clone();
    let target: Target = Arc::new(move |x| phi1(&m, &p, &[x]).unwrap_or(f64::NAN));
    let chained = poisson_solve_labeled(model, target, "phi1", poisson.range, grid)?;
    let m_phi = m_g1(model, &chained)?;
    let mut err = None;
    let i2 = poisson.nu_integral(|x| match phi2(model, poisson, &[x]) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let i2 = i2?;
    Ok(BiasConstants {
        m_g1: m1,
        m_g_phi1: m_phi,
        phi2_integral: i2,
        m_g2: 0.5 * (m_phi + i2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ou;

    #[test]
    fn quartic_potential_on_a_wide_range() {
        // e^{-s} spans ~10⁴ in the exponent here; the tail integrals sit at
        // the rounding floor of the interpolated s.
        let m = crate::model::make_kolmogorov_poly(0.0, 1.0, 1.0).unwrap();
        let p = poisson_solve_1d(&m, Arc::new(|x| x * x), (-6.0, 6.0), 200).unwrap();
        // ν(x²) = √2 Γ(3/4)/Γ(1/4) for the density ∝ e^{-x⁴/2}.
        let exact = std::f64::consts::SQRT_2 * 1.2254167024651776 / 3.6256099082219083;
        assert!((p.nu_f - exact).abs() < 1e-10, "{}", p.nu_f);
    }

    #[test]
    fn ou_linear_and_quadratic() {
        let ou = make_ou(1.0).unwrap();
        let p = poisson_solve_1d(&ou, Arc::new(|x| x), (-5.0, 5.0), 50).unwrap();
        assert!(p.nu_f.abs() < 1e-12);
        for x in [-4.0, -1.0, 0.3, 2.5, 4.0] {
            assert!((p.derivative(x, 1).unwrap() + 1.0).abs() < 1e-9, "g'({x})");
        }
        let q = poisson_solve_1d(&ou, Arc::new(|x| x * x), (-5.0, 5.0), 50).unwrap();
        assert!((q.nu_f - 0.5).abs() < 1e-12);
        for x in [-4.0, 0.3, 2.5] {
            assert!((q.derivative(x, 1).unwrap() + x).abs() < 1e-8);
            assert!((q.derivative(x, 2).unwrap() + 1.0).abs() < 1e-7);
            assert!(q.derivative(x, 3).unwrap().abs() < 1e-6);
        }
        assert!(q.max_residual < RESIDUAL_TOL);
    }

    #[test]
    fn constant_target() {
        let ou = make_ou(1.0).unwrap();
        let p = poisson_solve_1d(&ou, Arc::new(|_| 3.0), (-5.0, 5.0), 20).unwrap();
        assert!((p.nu_f - 3.0).abs() < 1e-12);
        assert!(p.derivative(1.3, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bias_constants_for_ou_square() {
        let ou = make_ou(1.0).unwrap();
        let known = PoissonData::from_known(&ou, &ou.info.poisson[1], (-8.0, 8.0), 40).unwrap();
        let m1 = m_g1(&ou, &known).unwrap();
        assert!((m1 + 0.25).abs() < 1e-10, "{m1}");
        let solved = poisson_solve_1d(&ou, Arc::new(|x| x * x), (-8.0, 8.0), 40).unwrap();
        assert!((m_g1(&ou, &solved).unwrap() + 0.25).abs() < 1e-8);
        let bc = bias_constants(&ou, &known, 40).unwrap();
        assert!((bc.m_g_phi1 - 0.125).abs() < 1e-8, "{bc:?}");
        assert!(bc.phi2_integral.abs() < 1e-12);
        assert!((bc.m_g2 - 0.0625).abs() < 1e-8);
    }
}
