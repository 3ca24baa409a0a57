//! Scale function and speed measure of a one-dimensional diffusion.

use serde::Serialize;

use crate::model::Model;
use crate::quadrature::integrate_rel;
use crate::{Error, Result};

pub const DEFAULT_GRID: usize = 400;

const REL: f64 = 1e-12;

/// Tabulated `p`, `p'` and speed density `1/(σ² p')` on a grid containing
/// `x0`, with growth flags at both ends of the range.
#[derive(Clone, Serialize)]
pub struct OneDimTheory {
    pub x0: f64,
    pub grid: Vec<f64>,
    /// `∫_{x0}^x 2b/σ²` at the grid points.
    pub log_scale_rate: Vec<f64>,
    pub p: Vec<f64>,
    pub p_prime: Vec<f64>,
    pub speed_density: Vec<f64>,
    /// Speed mass of `[lo, hi]`.
    pub mass: f64,
    /// Tail mass in the outer tenth of each side is negligible.
    pub mass_finite: bool,
    pub p_to_plus_infinity: bool,
    pub p_to_minus_infinity: bool,
    #[serde(skip)]
    model: Option<Model>,
}

impl std::fmt::Debug for OneDimTheory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OneDimTheory")
            .field("x0", &self.x0)
            .field("points", &self.grid.len())
            .field("mass", &self.mass)
            .finish()
    }
}

fn rate(model: &Model, x: f64) -> f64 {
    let mut b = [0.0];
    let mut s = [0.0];
    model.drift_into(&[x], &mut b);
    model.diffusion_into(&[x], &mut s);
    2.0 * b[0] / (s[0] * s[0])
}

fn sigma2(model: &Model, x: f64) -> f64 {
    let mut s = [0.0];
    model.diffusion_into(&[x], &mut s);
    s[0] * s[0]
}

fn named(e: Error, what: &str, a: f64, b: f64) -> Error {
    match e {
        Error::Quadrature(m) => Error::Quadrature(format!("{what} on [{a}, {b}]: {m}")),
        other => other,
    }
}

pub fn scale_speed_1d(model: &Model, x0: f64, range: (f64, f64)) -> Result<OneDimTheory> {
    scale_speed_1d_with(model, x0, range, DEFAULT_GRID)
}

pub fn scale_speed_1d_with(model: &Model, x0: f64, range: (f64, f64), n: usize) -> Result<OneDimTheory> {
    if model.d() != 1 || model.q() != 1 {
        return Err(Error::Dimension("scale_speed_1d needs d = q = 1".into()));
    }
    let (lo, hi) = range;
    if !(lo < hi && lo <= x0 && x0 <= hi) {
        return Err(Error::param("range", "need lo < hi and x0 in [lo, hi]"));
    }
    if n < 10 {
        return Err(Error::param("grid", "need at least 10 cells"));
    }
    let mut grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let nearest = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x0).abs().total_cmp(&(b.1 - x0).abs()))
        .map(|(i, _)| i)
        .unwrap();
    if (grid[nearest] - x0).abs() > 1e-12 * (hi - lo) {
        grid.push(x0);
        grid.sort_by(f64::total_cmp);
    } else {
        grid[nearest] = x0;
    }
    let k0 = grid.iter().position(|&g| g == x0).unwrap();
    let m = grid.len();

    let r = |x: f64| rate(model, x);
    let mut s = vec![0.0; m];
    for k in k0 + 1..m {
        s[k] = s[k - 1] + integrate_rel(r, grid[k - 1], grid[k], REL, 1e-14).map_err(|e| named(e, "2b/sigma^2", grid[k - 1], grid[k]))?;
    }
    for k in (0..k0).rev() {
        s[k] = s[k + 1] - integrate_rel(r, grid[k], grid[k + 1], REL, 1e-14).map_err(|e| named(e, "2b/sigma^2", grid[k], grid[k + 1]))?;
    }
    let s_at = |x: f64, k: usize| -> f64 {
        match integrate_rel(r, grid[k], x, REL, 1e-14) {
            Ok(v) => s[k] + v,
            Err(_) => f64::NAN,
        }
    };

    let mut p = vec![0.0; m];
    let mut speed_cells = vec![0.0; m - 1];
    for k in 0..m - 1 {
        let pp = |x: f64| (-s_at(x, k)).exp();
        let inc = integrate_rel(pp, grid[k], grid[k + 1], REL, 1e-300).map_err(|e| named(e, "p'", grid[k], grid[k + 1]))?;
        let sp = |x: f64| s_at(x, k).exp() / sigma2(model, x);
        speed_cells[k] = integrate_rel(sp, grid[k], grid[k + 1], REL, 1e-300).map_err(|e| named(e, "speed density", grid[k], grid[k + 1]))?;
        p[k + 1] = inc;
    }
    // Turn cell increments into values anchored at p(x0) = 0.
    let incs = p.clone();
    p[k0] = 0.0;
    for k in k0 + 1..m {
        p[k] = p[k - 1] + incs[k];
    }
    for k in (0..k0).rev() {
        p[k] = p[k + 1] - incs[k + 1];
    }
    let p_prime: Vec<f64> = s.iter().map(|v| (-v).exp()).collect();
    let speed_density: Vec<f64> = grid.iter().zip(&s).map(|(x, v)| v.exp() / sigma2(model, *x)).collect();
    if let Some(k) = (0..m).find(|&k| !(p_prime[k] > 0.0 && p_prime[k].is_finite() && speed_density[k].is_finite())) {
        return Err(Error::Quadrature(format!("scale density not finite and positive at x = {}", grid[k])));
    }
    let mass: f64 = speed_cells.iter().sum();

    // Growth flags from the outer tenth against the next tenth on each side.
    let tenth = (m - 1) / 10;
    let right_last = p[m - 1] - p[m - 1 - tenth];
    let right_prev = p[m - 1 - tenth] - p[m - 1 - 2 * tenth];
    let left_last = p[tenth] - p[0];
    let left_prev = p[2 * tenth] - p[tenth];
    let tail_mass: f64 = speed_cells[..tenth].iter().sum::<f64>() + speed_cells[m - 1 - tenth..].iter().sum::<f64>();
    Ok(OneDimTheory {
        x0,
        log_scale_rate: s,
        p,
        p_prime,
        speed_density,
        mass,
        mass_finite: mass.is_finite() && tail_mass <= 1e-6 * mass,
        p_to_plus_infinity: right_last >= 0.5 * right_prev,
        p_to_minus_infinity: left_last >= 0.5 * left_prev,
        grid,
        model: Some(model.clone()),
    })
}

impl OneDimTheory {
    fn cell(&self, x: f64) -> Result<usize> {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if !(lo <= x && x <= hi) {
            return Err(Error::param("x", format!("outside tabulated range [{lo}, {hi}]")));
        }
        Ok(self.grid.partition_point(|g| *g <= x).saturating_sub(1).min(self.grid.len() - 2))
    }

    fn model(&self) -> Result<&Model> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Unavailable("scale table was deserialized without its model".into()))
    }

    /// `∫_{x0}^x 2b/σ²`.
    pub fn log_rate_at(&self, x: f64) -> Result<f64> {
        let k = self.cell(x)?;
        let m = self.model()?;
        Ok(self.log_scale_rate[k] + integrate_rel(|u| rate(m, u), self.grid[k], x, REL, 1e-14)?)
    }

    pub fn p_prime_at(&self, x: f64) -> Result<f64> {
        Ok((-self.log_rate_at(x)?).exp())
    }

    /// `p(x)` for `x` in the tabulated range.
    pub fn p_at(&self, x: f64) -> Result<f64> {
        let k = self.cell(x)?;
        let m = self.model()?;
        let base = self.log_scale_rate[k];
        let g0 = self.grid[k];
        let pp = |u: f64| match integrate_rel(|v| rate(m, v), g0, u, REL, 1e-14) {
            Ok(v) => (-(base + v)).exp(),
            Err(_) => f64::NAN,
        };
        Ok(self.p[k] + integrate_rel(pp, g0, x, REL, 1e-300)?)
    }

    pub fn speed_density_at(&self, x: f64) -> Result<f64> {
        Ok(self.log_rate_at(x)?.exp() / sigma2(self.model()?, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_martingale_hyperbolic, make_ou};

    #[test]
    fn martingale_scale_is_identity() {
        let m = make_martingale_hyperbolic(1.0, 1.0).unwrap();
        let t = scale_speed_1d_with(&m, 0.3, (-5.0, 5.0), 50).unwrap();
        for (x, p) in t.grid.iter().zip(&t.p) {
            assert!((p - (x - 0.3)).abs() < 1e-12);
        }
        assert!(t.p_to_plus_infinity && t.p_to_minus_infinity);
        assert!((t.p_at(1.234).unwrap() - 0.934).abs() < 1e-12);
    }

    #[test]
    fn ou_scale_matches_dawson_integral() {
        let m = make_ou(1.0).unwrap();
        let t = scale_speed_1d_with(&m, 0.0, (-3.0, 3.0), 60).unwrap();
        assert_eq!(t.p_prime[t.grid.iter().position(|g| *g == 0.0).unwrap()], 1.0);
        // Series oracle: ∫₀ˣ e^{ξ²} dξ = Σ x^{2k+1} / (k! (2k+1)).
        let series = |x: f64| {
            let (mut term, mut sum) = (x, 0.0);
            for k in 0..200 {
                sum += term / (2 * k + 1) as f64;
                term *= x * x / (k + 1) as f64;
            }
            sum
        };
        for x in [-3.0, -1.0, 0.5, 2.0, 3.0] {
            let v = t.p_at(x).unwrap();
            assert!((v - series(x)).abs() <= 1e-10 * series(x).abs().max(1.0), "x={x}");
        }
        assert!(t.p.windows(2).all(|w| w[1] > w[0]));
        // Speed density e^{-x²} integrates to √π on a wide range.
        let w = scale_speed_1d(&m, 0.0, (-10.0, 10.0)).unwrap();
        assert!((w.mass - std::f64::consts::PI.sqrt()).abs() < 1e-9);
        assert!(w.mass_finite);
    }

    #[test]
    fn singular_diffusion_is_named() {
        let m = crate::model::make_martingale_1d(|x: f64| x).unwrap();
        let e = scale_speed_1d_with(&m, 1.0, (-1.0, 2.0), 30).unwrap_err();
        assert!(matches!(e, Error::Quadrature(_)), "{e}");
    }
}
