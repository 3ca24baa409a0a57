//! Sampled criterion checks: compact-set monotonicity, directional
//! ellipticity and NILS envelopes. Every report is grid or sample evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::confluence::diagonal::box_grid;
use crate::confluence::nils::{nils, pair_terms};
use crate::confluence::MetricS;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::model::Model;
use crate::{Error, Result};

fn uniform_in_box(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|(lo, hi)| if lo < hi { rng.random_range(*lo..*hi) } else { *lo })
        .collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompactSetReport {
    /// Largest sampled `[(b(x)-b(y)|x-y)_S + ½‖σ(x)-σ(y)‖_S²] / |x-y|_S²`.
    pub max_pair_ratio: f64,
    pub worst_pair: (Vec<f64>, Vec<f64>),
    /// The same supremum restricted to pairs with `|x|_S ≤ r/2`.
    pub max_pair_ratio_inner: f64,
    /// The supremum is attained near the boundary and still growing from
    /// the inner half; the global value may be larger or unbounded.
    pub possibly_unbounded: bool,
    pub pair_test_holds: bool,
    /// Largest eigenvalue of the differential form over the grid.
    pub max_differential_eigenvalue: f64,
    pub worst_point: Vec<f64>,
    pub differential_holds: bool,
    pub holds: bool,
    pub pairs: usize,
    pub grid_per_axis: usize,
    pub evidence: &'static str,
}

/// `S J_b + J_bᵀ S + N` with `uᵀ N u = ‖Dσ[u]‖_S²`.
pub fn differential_form(model: &Model, s: &MetricS, x: &[f64]) -> Result<Matrix> {
    let (d, q) = (model.d(), model.q());
    let j = model.jacobian(x);
    let grad = model.sigma_gradient(x);
    let sj = s.matrix().mul(&j);
    let mut m = sj.add(&sj.transpose());
    let sm = s.matrix();
    for k in 0..d {
        for kk in 0..d {
            let mut acc = 0.0;
            for l in 0..q {
                for i in 0..d {
                    for ii in 0..d {
                        acc += grad[(i * q + l) * d + k] * sm[(i, ii)] * grad[(ii * q + l) * d + kk];
                    }
                }
            }
            m[(k, kk)] += acc;
        }
    }
    if !m.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::Derivative(format!("non-finite derivatives at {x:?}")));
    }
    Ok(m.symmetrized())
}

/// Sample pairs in the S-ball of radius `r` with `0 < |x-y|_S ≤ delta` and
/// test the strict monotonicity inequality; also test the differential form
/// on a grid of the bounding box.
pub fn compact_set_criterion(
    model: &Model,
    s: &MetricS,
    radius: f64,
    delta: f64,
    pairs: usize,
    grid: usize,
    seed: u64,
) -> Result<CompactSetReport> {
    if !(radius > 0.0 && delta > 0.0) {
        return Err(Error::param("radius/delta", "must be positive"));
    }
    let d = model.d();
    let r = s.sqrt_inv();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = (vec![], vec![]);
    let mut inner = f64::NEG_INFINITY;
    for _ in 0..pairs {
        // Uniform in the Euclidean ball, mapped into the S-ball.
        let dir = unit_gaussian(&mut rng, d);
        let rad = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let w: Vec<f64> = dir.iter().map(|v| v * rad).collect();
        let x = r.mul_vec(&w);
        let step_dir = unit_gaussian(&mut rng, d);
        let len = delta * rng.random::<f64>().max(1e-6);
        let off = r.mul_vec(&step_dir.iter().map(|v| v * len).collect::<Vec<_>>());
        let y: Vec<f64> = x.iter().zip(&off).map(|(a, b)| a + b).collect();
        if s.is_near_diagonal(&x, &y) {
            continue;
        }
        let t = pair_terms(model, s, &x, &y)?;
        let ratio = (t.drift + 0.5 * t.sigma_fro) / t.dist2;
        if rad <= 0.5 * radius {
            inner = inner.max(ratio);
        }
        if ratio > worst {
            worst = ratio;
            worst_pair = (x, y);
        }
    }
    // Bounding box of the S-ball: half-widths R sqrt((S^{-1})_ii).
    let s_inv = r.mul(r);
    let bounds: Vec<(f64, f64)> = (0..d)
        .map(|i| {
            let e = radius * s_inv[(i, i)].sqrt();
            (-e, e)
        })
        .collect();
    let mut max_eig = f64::NEG_INFINITY;
    let mut worst_point = vec![];
    for x in box_grid(&bounds, grid) {
        if s.norm(&x) > radius {
            continue;
        }
        let m = differential_form(model, s, &x)?;
        let e = symmetric_eigen(&m)?.max_value();
        if e > max_eig {
            max_eig = e;
            worst_point = x;
        }
    }
    let possibly_unbounded = !worst_pair.0.is_empty()
        && s.norm(&worst_pair.0) > 0.9 * radius
        && worst > inner + 1e-9 * (1.0 + inner.abs());
    Ok(CompactSetReport {
        max_pair_ratio: worst,
        worst_pair,
        max_pair_ratio_inner: inner,
        possibly_unbounded,
        pair_test_holds: worst < 0.0,
        max_differential_eigenvalue: max_eig,
        worst_point,
        differential_holds: max_eig < 0.0,
        holds: worst < 0.0 && max_eig < 0.0,
        pairs,
        grid_per_axis: grid,
        evidence: "sampled pairs and grid points; not a proof",
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    /// Sampled inf of `|(σᵀ(x)-σᵀ(y)) S (x-y)|` over pairs with `|x-y|_S ≥ eps0`.
    pub eta0_estimate: f64,
    /// Sampled inf of the same quantity divided by `|x-y|²`.
    pub strong_alpha0_estimate: f64,
    pub pairs: usize,
    pub evidence: &'static str,
}

fn ellipticity_quantity(model: &Model, s: &MetricS, x: &[f64], y: &[f64]) -> f64 {
    let (d, q) = (model.d(), model.q());
    let sx = model.diffusion(x);
    let sy = model.diffusion(y);
    let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let sd = s.apply(&delta);
    let mut acc = 0.0;
    for l in 0..q {
        let mut v = 0.0;
        for i in 0..d {
            v += (sx[(i, l)] - sy[(i, l)]) * sd[i];
        }
        acc += v * v;
    }
    acc.sqrt()
}

/// Random and coordinate-aligned pairs in a box.
pub fn directional_ellipticity(
    model: &Model,
    s: &MetricS,
    eps0: f64,
    budget: usize,
    bounds: &[(f64, f64)],
    seed: u64,
) -> Result<EllipticityReport> {
    if !(eps0 > 0.0) {
        return Err(Error::param("eps0", "must be positive"));
    }
    let d = model.d();
    if bounds.len() != d {
        return Err(Error::Dimension("box must have one interval per coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eta = f64::INFINITY;
    let mut alpha = f64::INFINITY;
    let mut count = 0;
    let mut consider = |x: &[f64], y: &[f64]| {
        let dist_s = s.distance(x, y);
        if dist_s < s.diagonal_threshold(x, y) {
            return;
        }
        let e2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let qv = ellipticity_quantity(model, s, x, y);
        if dist_s >= eps0 {
            eta = eta.min(qv);
        }
        alpha = alpha.min(qv / e2);
        count += 1;
    };
    for k in 0..budget {
        let x = uniform_in_box(&mut rng, bounds);
        let y = if k % 2 == 0 {
            uniform_in_box(&mut rng, bounds)
        } else {
            // Coordinate-aligned partner.
            let mut y = x.clone();
            let axis = k / 2 % d;
            let (lo, hi) = bounds[axis];
            y[axis] = if lo < hi { rng.random_range(lo..hi) } else { lo };
            y
        };
        consider(&x, &y);
    }
    Ok(EllipticityReport {
        eta0_estimate: if eta.is_finite() { eta } else { f64::NAN },
        strong_alpha0_estimate: if alpha.is_finite() { alpha } else { f64::NAN },
        pairs: count,
        evidence: "sampled infimum (an upper bound of the true infimum)",
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeReport {
    /// Largest sampled `Λ_S(x,y) - β + (α/2)(|x|^a + |y|^a)`.
    pub max_excess: f64,
    pub worst_pair: (Vec<f64>, Vec<f64>),
    pub violated: bool,
    pub pairs: usize,
    pub evidence: &'static str,
}

/// Check `Λ_S(x,y) ≤ β - (α/2)(|x|^a + |y|^a)` on sampled pairs, half of
/// them close to the diagonal.
#[allow(clippy::too_many_arguments)]
pub fn verify_envelope(
    model: &Model,
    s: &MetricS,
    alpha: f64,
    beta: f64,
    a: f64,
    budget: usize,
    bounds: &[(f64, f64)],
    seed: u64,
) -> Result<EnvelopeReport> {
    if !(alpha > 0.0 && a > 0.0) {
        return Err(Error::param("alpha/a", "must be positive"));
    }
    let d = model.d();
    if bounds.len() != d {
        return Err(Error::Dimension("box must have one interval per coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = (vec![], vec![]);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut count = 0;
    for k in 0..budget {
        let x = uniform_in_box(&mut rng, bounds);
        let y = if k % 2 == 0 {
            uniform_in_box(&mut rng, bounds)
        } else {
            let dir = unit_gaussian(&mut rng, d);
            let h = 1e-3 * (1.0 + norm(&x));
            x.iter().zip(&dir).map(|(a, b)| a + h * b).collect()
        };
        if s.is_near_diagonal(&x, &y) {
            continue;
        }
        let lam = nils(model, s, &x, &y)?;
        let excess = lam - beta + 0.5 * alpha * (norm(&x).powf(a) + norm(&y).powf(a));
        count += 1;
        if excess > worst {
            worst = excess;
            worst_pair = (x, y);
        }
    }
    Ok(EnvelopeReport {
        max_excess: worst,
        worst_pair,
        violated: worst > 1e-10 * (1.0 + beta.abs()),
        pairs: count,
        evidence: "sampled pairs; absence of violation is not a proof",
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricSearchReport {
    pub diagonal: Vec<f64>,
    pub max_nils: f64,
    pub candidates: usize,
}

/// Helper (not a certified procedure): among diagonal metrics `S` with
/// entries drawn from `levels` (first entry fixed to 1), pick the one
/// minimizing the sampled maximum of `Λ_S` over random pairs in a box.
pub fn search_diagonal_metric(
    model: &Model,
    levels: &[f64],
    bounds: &[(f64, f64)],
    pairs: usize,
    seed: u64,
) -> Result<MetricSearchReport> {
    let d = model.d();
    if levels.iter().any(|l| *l <= 0.0) || levels.is_empty() {
        return Err(Error::param("levels", "must be a non-empty list of positive numbers"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
        .map(|_| (uniform_in_box(&mut rng, bounds), uniform_in_box(&mut rng, bounds)))
        .collect();
    let combos = levels.len().pow(d.saturating_sub(1) as u32);
    let mut best: Option<MetricSearchReport> = None;
    for mut idx in 0..combos {
        let mut diag = vec![1.0; d];
        for entry in diag.iter_mut().skip(1) {
            *entry = levels[idx % levels.len()];
            idx /= levels.len();
        }
        let s = MetricS::new(Matrix::diag(&diag))?;
        let mut worst = f64::NEG_INFINITY;
        for (x, y) in &sample {
            if s.is_near_diagonal(x, y) {
                continue;
            }
            worst = worst.max(nils(model, &s, x, y)?);
        }
        if best.as_ref().is_none_or(|b| worst < b.max_nils) {
            best = Some(MetricSearchReport {
                diagonal: diag,
                max_nils: worst,
                candidates: combos,
            });
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Area of the unit sphere in `ℝ^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let (mut a, mut k) = if d % 2 == 1 { (2.0, 1) } else { (2.0 * pi, 2) };
    while k < d {
        a *= 2.0 * pi / k as f64;
        k += 2;
    }
    a
}

/// `∫ (1 - |x|²) e^{-2U(x)/σ²} dx` for the double well `U = (|x|² - 1)²/4`,
/// over the ball of radius `half_width` in `ℝ^d` via the radial reduction.
/// Outside that ball the integrand is below `r^{d+1} e^{-(r²-1)²/(2σ²)}`,
/// so for the usual `half_width = 6` the box and the ball agree to far
/// beyond double precision.
pub fn double_well_sign_integral(sigma: f64, d: usize, half_width: f64) -> Result<f64> {
    if !(sigma > 0.0 && half_width > 0.0) || d == 0 {
        return Err(Error::param("sigma/d/half_width", "must be positive"));
    }
    let s2 = sigma * sigma;
    let radial = crate::quadrature::integrate_rel(
        |r| {
            let r2 = r * r;
            (1.0 - r2) * (-(r2 - 1.0).powi(2) / (2.0 * s2)).exp() * r.powi(d as i32 - 1)
        },
        0.0,
        half_width,
        1e-12,
        1e-300,
    )?;
    Ok(unit_sphere_area(d) * radial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_baxendale, make_double_well, make_ou, make_polar_counterexample, make_rank_one_linear};

    #[test]
    fn compact_set_examples() {
        let ou = make_ou(1.0).unwrap();
        let r = compact_set_criterion(&ou, &MetricS::identity(1), 5.0, 0.5, 500, 11, 1).unwrap();
        assert!(r.holds && (r.max_pair_ratio + 1.0).abs() < 1e-12);
        assert!(!r.possibly_unbounded);
        let dw = make_double_well(1.0, 2).unwrap();
        let r = compact_set_criterion(&dw, &MetricS::identity(2), 2.0, 0.1, 2000, 9, 1).unwrap();
        assert!(!r.holds && r.max_differential_eigenvalue > 1.9);
        assert!(!r.possibly_unbounded && r.max_pair_ratio_inner > 0.9);
        // Expanding cubic drift: the ratio keeps growing towards the boundary.
        let cubic = Model::new("cubic", 1, 1, |x, o| o[0] = x[0].powi(3), |_, o| o[0] = 1.0).unwrap();
        let r = compact_set_criterion(&cubic, &MetricS::identity(1), 3.0, 0.1, 2000, 11, 1).unwrap();
        assert!(r.possibly_unbounded);
    }

    #[test]
    fn ellipticity_examples() {
        let ou = make_ou(1.0).unwrap();
        let r = directional_ellipticity(&ou, &MetricS::identity(1), 0.1, 200, &[(-3.0, 3.0)], 2).unwrap();
        assert_eq!(r.eta0_estimate, 0.0);
        let m = make_rank_one_linear(1.0, vec![-0.7], 0.0).unwrap();
        let r = directional_ellipticity(&m, &MetricS::identity(1), 0.1, 200, &[(-3.0, 3.0)], 2).unwrap();
        assert!((r.strong_alpha0_estimate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn polar_ellipticity_on_circle_is_tangential() {
        let m = make_polar_counterexample(1.0, 1.3).unwrap();
        let s = MetricS::identity(2);
        let (a, b) = (0.4f64, 2.1f64);
        let x = [a.cos(), a.sin()];
        let y = [b.cos(), b.sin()];
        let e2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
        // The tangential column rotates x - y by 90 degrees, so only the
        // component of the rotated difference along x - y survives.
        let qv = ellipticity_quantity(&m, &s, &x, &y);
        let rot = [-(x[1] - y[1]), x[0] - y[0]];
        let expect = 1.3 * (rot[0] * (x[0] - y[0]) + rot[1] * (x[1] - y[1])).abs();
        assert!((qv - expect).abs() < 1e-12);
        assert!(qv / e2 < 1e-12);
    }

    #[test]
    fn envelope_examples() {
        let dw = make_double_well(1.0, 2).unwrap();
        let s = MetricS::identity(2);
        let b = [(-2.5, 2.5), (-2.5, 2.5)];
        let r = verify_envelope(&dw, &s, 1.0, 1.0, 2.0, 3000, &b, 4).unwrap();
        assert!(!r.violated, "{}", r.max_excess);
        let r = verify_envelope(&dw, &s, 1.0, -10.0, 2.0, 3000, &b, 4).unwrap();
        assert!(r.violated);
        let rot = Model::new("rot", 2, 2, |x, o| {
            o[0] = -x[1];
            o[1] = x[0];
        }, |_, o| o.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
        .unwrap();
        let r = verify_envelope(&rot, &s, 1e-12, 0.0, 2.0, 500, &b, 4).unwrap();
        assert!(r.max_excess.abs() < 1e-9);
    }

    #[test]
    fn metric_search_prefers_baxendale_lambda_region() {
        let m = make_baxendale(1.0, -2.0, 3.0, 0.0, 0.0).unwrap();
        let r = search_diagonal_metric(&m, &[0.25, 0.72075, 1.0, 2.0], &[(-2.0, 2.0), (-2.0, 2.0)], 300, 3).unwrap();
        assert!(r.max_nils < 0.0);
        assert_eq!(r.candidates, 4);
    }

    #[test]
    fn sphere_areas() {
        let pi = std::f64::consts::PI;
        assert_eq!(unit_sphere_area(1), 2.0);
        assert!((unit_sphere_area(2) - 2.0 * pi).abs() < 1e-15);
        assert!((unit_sphere_area(3) - 4.0 * pi).abs() < 1e-14);
        assert!((unit_sphere_area(4) - 2.0 * pi * pi).abs() < 1e-13);
    }

    #[test]
    fn sign_integral_matches_grid_in_the_plane() {
        // Composite Simpson on the square [-6, 6]².
        let sigma: f64 = 1.0;
        let n = 1200;
        let h = 12.0 / n as f64;
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut acc = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let (x, y) = (-6.0 + i as f64 * h, -6.0 + j as f64 * h);
                let r2 = x * x + y * y;
                acc += w(i) * w(j) * (1.0 - r2) * (-(r2 - 1.0).powi(2) / (2.0 * sigma * sigma)).exp();
            }
        }
        let grid = acc * h * h / 9.0;
        let radial = double_well_sign_integral(sigma, 2, 6.0).unwrap();
        assert!(radial < 0.0);
        assert!((grid - radial).abs() < 1e-8, "{grid} vs {radial}");
    }
}
