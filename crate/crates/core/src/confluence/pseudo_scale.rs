//! Pseudo-scale functions `f_θ(u) = ∫₁ᵘ exp(∫_ξ¹ θ(w)/w dw) dξ`,
//! `g_θ(u) = u f_θ'(u)`, and grid tests of the integrability conditions on
//! `θ`.
//!
//! With `w = e^s` the inner integral becomes `∫_ξ¹ θ(w)/w dw = -J(ln ξ)`
//! where `J(t) = ∫₀ᵗ θ(eˢ) ds`, and `f_θ(u) = ∫₀^{ln u} exp(t - J(t)) dt`.

use serde::Serialize;

use crate::confluence::ThetaFunction;
use crate::quadrature::{integrate, integrate_rel};
use crate::{Error, Result};

const GRID_LO: f64 = -40.0 * std::f64::consts::LN_2 - 1.0;
const GRID_HI: f64 = 7.0;
const GRID_H: f64 = 0.25;
const INNER_TOL: f64 = 1e-13;
const OUTER_REL: f64 = 1e-12;

/// `θ` with a cached table of `J` on a uniform grid in `ln u`.
#[derive(Clone, Debug)]
pub struct PseudoScale {
    theta: ThetaFunction,
    nodes: Vec<f64>,
    j_nodes: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PseudoScaleValue {
    pub f: f64,
    pub f_prime: f64,
    pub g: f64,
}

impl PseudoScale {
    pub fn new(theta: ThetaFunction) -> Result<Self> {
        let n = ((GRID_HI - GRID_LO) / GRID_H).ceil() as usize;
        let nodes: Vec<f64> = (0..=n).map(|k| GRID_LO + k as f64 * GRID_H).collect();
        // Index of the node closest to 0, where J vanishes.
        let zero = nodes
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let th = |s: f64| theta.eval(s.exp());
        let mut j_nodes = vec![0.0; nodes.len()];
        j_nodes[zero] = integrate(th, 0.0, nodes[zero], INNER_TOL)?;
        for k in zero + 1..nodes.len() {
            j_nodes[k] = j_nodes[k - 1] + integrate(th, nodes[k - 1], nodes[k], INNER_TOL)?;
        }
        for k in (0..zero).rev() {
            j_nodes[k] = j_nodes[k + 1] - integrate(th, nodes[k], nodes[k + 1], INNER_TOL)?;
        }
        if !j_nodes.iter().all(|v| v.is_finite()) {
            return Err(Error::Quadrature("inner integral of theta(w)/w diverges".into()));
        }
        Ok(PseudoScale {
            theta,
            nodes,
            j_nodes,
        })
    }

    pub fn theta(&self) -> &ThetaFunction {
        &self.theta
    }

    /// `J(t) = ∫₀ᵗ θ(eˢ) ds`.
    pub fn big_j(&self, t: f64) -> Result<f64> {
        let k = (((t - GRID_LO) / GRID_H).floor().max(0.0) as usize).min(self.nodes.len() - 1);
        let th = |s: f64| self.theta.eval(s.exp());
        Ok(self.j_nodes[k] + integrate(th, self.nodes[k], t, INNER_TOL)?)
    }

    /// `f_θ'(u) = exp(∫_u¹ θ(w)/w dw)`.
    pub fn f_prime(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::param("u", "must be positive"));
        }
        Ok((-self.big_j(u.ln())?).exp())
    }

    /// `(f_θ(u), f_θ'(u), g_θ(u))`.
    pub fn eval(&self, u: f64) -> Result<PseudoScaleValue> {
        let fp = self.f_prime(u)?;
        let integrand = |t: f64| match self.big_j(t) {
            Ok(j) => (t - j).exp(),
            Err(_) => f64::NAN,
        };
        let f = integrate_rel(integrand, 0.0, u.ln(), OUTER_REL, 1e-300)?;
        Ok(PseudoScaleValue {
            f,
            f_prime: fp,
            g: u * fp,
        })
    }

    /// `∫` of `f_θ'` over `[2^{-j}, 2^{-(j-1)}]`.
    fn shell_mass(&self, j: u32) -> Result<f64> {
        let a = -(j as f64) * std::f64::consts::LN_2;
        let b = -((j - 1) as f64) * std::f64::consts::LN_2;
        integrate_rel(
            |t| match self.big_j(t) {
                Ok(jv) => (t - jv).exp(),
                Err(_) => f64::NAN,
            },
            a,
            b,
            1e-10,
            1e-300,
        )
    }
}

/// `(f_θ(u), f_θ'(u), g_θ(u))` for a single `u`.
pub fn pseudo_scale_eval(theta: &ThetaFunction, u: f64) -> Result<PseudoScaleValue> {
    PseudoScale::new(theta.clone())?.eval(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesVerdict {
    Bounded,
    Unbounded,
    Inconclusive,
}

/// Classify `Σ_j terms[j]` from its tail: bounded above when the tail is
/// non-positive or negligible, or decays geometrically or faster than `j^{-1}`.
pub fn classify_tail(terms: &[f64]) -> SeriesVerdict {
    let tail = &terms[terms.len().saturating_sub(10)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    if mean <= 1e-6 {
        return SeriesVerdict::Bounded;
    }
    if tail.iter().any(|t| *t <= 0.0) {
        return SeriesVerdict::Inconclusive;
    }
    let first = tail[0];
    let last = tail[tail.len() - 1];
    let ratio = (last / first).powf(1.0 / (tail.len() - 1) as f64);
    if ratio < 0.95 {
        return SeriesVerdict::Bounded;
    }
    // Power-law exponent from the tail: terms ~ j^{-p}.
    let j0 = (terms.len() - tail.len() + 1) as f64;
    let j1 = terms.len() as f64;
    let p = -(last.ln() - first.ln()) / (j1.ln() - j0.ln());
    if p > 1.05 {
        SeriesVerdict::Bounded
    } else if p < 0.95 {
        SeriesVerdict::Unbounded
    } else {
        SeriesVerdict::Inconclusive
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KappaBound {
    /// Largest `κ` with `θ(u) ≤ 1 + κ / ln u` on the grid below `eps0`.
    pub kappa_hat: f64,
    pub eps0: f64,
    /// Some `κ ∈ (1, κ̂]` also satisfies `eps0 < e^{-κ/2}`.
    pub satisfied: bool,
    /// `sup θ` on the grid below `eps0`.
    pub theta0: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThetaReport {
    /// `limsup_{u→0} ∫_u¹ (θ(w) - 1)/w dw < ∞`.
    pub cond_i: bool,
    pub cond_i_verdict: SeriesVerdict,
    /// `∫₀¹ f_θ'(v) dv < ∞`.
    pub integrable_at_zero: bool,
    pub integrable_verdict: SeriesVerdict,
    pub kappa_bound: Option<KappaBound>,
    /// Smallest grid point `2^{-40}`.
    pub grid_min: f64,
    pub evidence: &'static str,
}

/// Grid tests of the conditions on `θ` near 0, on dyadic shells
/// `[2^{-j}, 2^{-(j-1)}]`, `j ≤ 40`.
pub fn check_theta_conditions(theta: &ThetaFunction, with_kappa: bool) -> Result<ThetaReport> {
    const SHELLS: u32 = 40;
    let ps = PseudoScale::new(theta.clone())?;
    let ln2 = std::f64::consts::LN_2;
    let th = |s: f64| theta.eval(s.exp()) - 1.0;
    let increments = (1..=SHELLS)
        .map(|j| integrate_rel(th, -(j as f64) * ln2, -((j - 1) as f64) * ln2, 1e-10, 1e-14))
        .collect::<Result<Vec<_>>>()?;
    let cond = classify_tail(&increments);
    let masses = (1..=SHELLS).map(|j| ps.shell_mass(j)).collect::<Result<Vec<_>>>()?;
    let integ = classify_tail(&masses);
    let kappa_bound = with_kappa.then(|| kappa_search(theta));
    Ok(ThetaReport {
        cond_i: cond == SeriesVerdict::Bounded,
        cond_i_verdict: cond,
        integrable_at_zero: integ == SeriesVerdict::Bounded,
        integrable_verdict: integ,
        kappa_bound,
        grid_min: 2f64.powi(-(SHELLS as i32)),
        evidence: "dyadic-grid evidence down to 2^-40; not a proof",
    })
}

fn kappa_search(theta: &ThetaFunction) -> KappaBound {
    let mut last = None;
    for j in 1..=30 {
        let eps0 = 2f64.powi(-j);
        let mut kappa = f64::INFINITY;
        let mut theta0 = f64::NEG_INFINITY;
        for k in (2 * j)..=80 {
            let u = 2f64.powf(-(k as f64) / 2.0);
            let t = theta.eval(u);
            kappa = kappa.min((t - 1.0) * u.ln());
            theta0 = theta0.max(t);
        }
        let bound = KappaBound {
            kappa_hat: kappa,
            eps0,
            satisfied: kappa > 1.0,
            theta0,
        };
        if bound.satisfied {
            return bound;
        }
        last = Some(bound);
    }
    last.expect("search runs at least once")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let one = PseudoScale::new(ThetaFunction::Constant(1.0)).unwrap();
        let zero = PseudoScale::new(ThetaFunction::Constant(0.0)).unwrap();
        for u in [1e-6, 1e-3, 0.5, 1.0, 2.0, 37.0, 1e3] {
            let a = one.eval(u).unwrap();
            assert!((a.f - u.ln()).abs() < 1e-9, "u={u}: {}", a.f);
            assert!((a.f_prime - 1.0 / u).abs() <= 1e-9 * (1.0 / u));
            assert!((a.g - 1.0).abs() < 1e-12);
            let b = zero.eval(u).unwrap();
            assert!((b.f - (u - 1.0)).abs() < 1e-9, "u={u}: {}", b.f);
            assert!((b.g - u).abs() < 1e-9 * u.max(1.0));
        }
        let odd = ThetaFunction::custom("1+sin", |u: f64| 1.0 + (3.0 * u).sin());
        assert_eq!(pseudo_scale_eval(&odd, 1.0).unwrap().f, 0.0);
    }

    #[test]
    fn monotone_on_probe_grid() {
        let ps = PseudoScale::new(ThetaFunction::log_corrected(2.0, 0.1)).unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in -12..=6 {
            let v = ps.eval(10f64.powf(k as f64 / 2.0)).unwrap();
            assert!(v.f > last && v.f_prime > 0.0);
            last = v.f;
        }
    }

    #[test]
    fn theta_condition_examples() {
        let r = check_theta_conditions(&ThetaFunction::Constant(1.0), false).unwrap();
        assert!(r.cond_i && !r.integrable_at_zero);
        let r = check_theta_conditions(&ThetaFunction::Constant(0.5), true).unwrap();
        assert!(r.cond_i && r.integrable_at_zero);
        let k = r.kappa_bound.unwrap();
        assert!(k.satisfied && k.theta0 == 0.5);
        let r = check_theta_conditions(&ThetaFunction::Constant(2.0), false).unwrap();
        assert!(!r.cond_i && r.cond_i_verdict == SeriesVerdict::Unbounded);
    }

    #[test]
    fn log_corrected_theta_is_integrable() {
        // θ(u) = 1 + 2/ln u gives f' ~ 1/(u ln² u): integrable at 0, while
        // ∫(θ-1)/w diverges to -∞, which is fine for condition (i).
        let th = ThetaFunction::log_corrected(2.0, 0.1);
        let r = check_theta_conditions(&th, true).unwrap();
        assert!(r.cond_i);
        assert!(r.kappa_bound.unwrap().satisfied);
    }
}
