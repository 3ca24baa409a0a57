//! The NILS exponent on the diagonal, obtained from the first-order
//! expansion of `Λ_S(x, x + t u)` as `t → 0`:
//!
//! `F_x(u) = uᵀ(S J_b + J_bᵀ S)u + ‖Dσ[u]‖_S² - 2 |Dσ[u]ᵀ S u|²`, `|u|_S = 1`,
//!
//! where `Dσ[u] = Σ_k u_k ∂_k σ`. The lower diagonal value is `½ inf F_x`
//! and the u.s.c. envelope uses `½ sup F_x`. Both extrema are sampled on the
//! S-sphere and refined by projected gradient steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::confluence::MetricS;
use crate::linalg::{dot, symmetric_eigen, Matrix};
use crate::model::Model;
use crate::{Error, Result};

/// Projected gradient steps after sphere sampling.
pub const REFINE_STEPS: usize = 20;

/// Quadratic/quartic form `F_x` frozen at one point.
#[derive(Clone, Debug)]
pub struct DiagonalForm {
    d: usize,
    q: usize,
    /// `S J + Jᵀ S`.
    a: Matrix,
    /// `∂_k σ` stored as `grad[(i*q + l)*d + k]`.
    grad: Vec<f64>,
    s: Matrix,
}

impl DiagonalForm {
    pub fn at(model: &Model, s: &MetricS, x: &[f64]) -> Result<Self> {
        let (d, q) = (model.d(), model.q());
        if x.len() != d || s.dim() != d {
            return Err(Error::Dimension(format!("point and S must have dimension {d}")));
        }
        let j = model.jacobian(x);
        let grad = model.sigma_gradient(x);
        if !j.as_slice().iter().chain(&grad).all(|v| v.is_finite()) {
            return Err(Error::Derivative(format!("non-finite derivatives at {x:?}")));
        }
        if !model.has_analytic_jacobian() || !model.has_analytic_sigma_gradient() {
            check_fd_stability(model, x, &j, &grad)?;
        }
        let sj = s.matrix().mul(&j);
        let a = sj.add(&sj.transpose());
        Ok(DiagonalForm {
            d,
            q,
            a,
            grad,
            s: s.matrix().clone(),
        })
    }

    /// `Dσ[u]` as a row-major `d × q` matrix.
    fn dsigma(&self, u: &[f64]) -> Vec<f64> {
        let (d, q) = (self.d, self.q);
        let mut m = vec![0.0; d * q];
        for il in 0..d * q {
            let row = &self.grad[il * d..(il + 1) * d];
            m[il] = dot(row, u);
        }
        m
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.eval_with_grad(u).0
    }

    /// `F(u)` and its Euclidean gradient.
    pub fn eval_with_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let (d, q) = (self.d, self.q);
        let au = self.a.mul_vec(u);
        let su = self.s.mul_vec(u);
        let m = self.dsigma(u);
        // S M, column by column.
        let mut sm = vec![0.0; d * q];
        for i in 0..d {
            for l in 0..q {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.s[(i, k)] * m[k * q + l];
                }
                sm[i * q + l] = acc;
            }
        }
        let mut fro = 0.0;
        for (a, b) in m.iter().zip(&sm) {
            fro += a * b;
        }
        // v = Mᵀ S u.
        let mut v = vec![0.0; q];
        for l in 0..q {
            for i in 0..d {
                v[l] += m[i * q + l] * su[i];
            }
        }
        let value = dot(u, &au) + fro - 2.0 * dot(&v, &v);

        let mut g = vec![0.0; d];
        for k in 0..d {
            let mut g_fro = 0.0;
            let mut g_proj = 0.0;
            for l in 0..q {
                let mut dv = 0.0;
                for i in 0..d {
                    let gk = self.grad[(i * q + l) * d + k];
                    g_fro += gk * sm[i * q + l];
                    dv += gk * su[i] + m[i * q + l] * self.s[(i, k)];
                }
                g_proj += v[l] * dv;
            }
            g[k] = 2.0 * au[k] + 2.0 * g_fro - 4.0 * g_proj;
        }
        (value, g)
    }
}

fn check_fd_stability(model: &Model, x: &[f64], j: &Matrix, grad: &[f64]) -> Result<()> {
    // Compare against differences with a doubled step.
    let d = model.d();
    let q = model.q();
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    let mut scale = 1.0f64;
    let mut bp = vec![0.0; d];
    let mut bm = vec![0.0; d];
    let mut sp = vec![0.0; d * q];
    let mut sm = vec![0.0; d * q];
    for k in 0..d {
        let h = 2.0 * crate::model::fd_step(x[k]);
        xp[k] = x[k] + h;
        model.drift_into(&xp, &mut bp);
        model.diffusion_into(&xp, &mut sp);
        xp[k] = x[k] - h;
        model.drift_into(&xp, &mut bm);
        model.diffusion_into(&xp, &mut sm);
        xp[k] = x[k];
        if !model.has_analytic_jacobian() {
            for i in 0..d {
                let alt = (bp[i] - bm[i]) / (2.0 * h);
                worst = worst.max((alt - j[(i, k)]).abs());
                scale = scale.max(alt.abs());
            }
        }
        if !model.has_analytic_sigma_gradient() {
            for il in 0..d * q {
                let alt = (sp[il] - sm[il]) / (2.0 * h);
                worst = worst.max((alt - grad[il * d + k]).abs());
                scale = scale.max(alt.abs());
            }
        }
    }
    if worst > 1e-4 * scale {
        return Err(Error::Derivative(format!(
            "finite differences unstable at {x:?} (discrepancy {worst:e})"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Inf,
    Sup,
}

/// Result of optimizing `F_x` over the S-sphere.
#[derive(Clone, Debug, Serialize)]
pub struct DiagonalValue {
    /// `½ F_x(u*)`.
    pub value: f64,
    /// Achieving direction, normalized to `|u|_S = 1`.
    pub direction: Vec<f64>,
    pub extremum: Extremum,
    pub sphere_points: usize,
}

/// Deterministic unit vectors used as starting points on the Euclidean
/// sphere of dimension `d`.
pub fn sphere_samples(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0]],
        2 => (0..n)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batches = n.div_ceil(d);
            let mut out = Vec::with_capacity(batches * d);
            for _ in 0..batches {
                // Gram-Schmidt on a Gaussian matrix gives a random orthonormal frame.
                let mut frame: Vec<Vec<f64>> = Vec::with_capacity(d);
                while frame.len() < d {
                    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    for e in &frame {
                        let p = dot(&v, e);
                        for (vi, ei) in v.iter_mut().zip(e) {
                            *vi -= p * ei;
                        }
                    }
                    let nv = dot(&v, &v).sqrt();
                    if nv > 1e-8 {
                        v.iter_mut().for_each(|x| *x /= nv);
                        frame.push(v);
                    }
                }
                out.extend(frame);
            }
            out
        }
    }
}

/// Default number of starting directions for dimension `d`.
pub fn default_sphere_points(d: usize) -> usize {
    match d {
        1 => 1,
        2 => 180,
        3 => 400,
        _ => 64 * d,
    }
}

/// Optimize `F` over `|u|_S = 1` through `u = S^{-1/2} w`, `|w| = 1`.
pub fn optimize_form(form: &DiagonalForm, s: &MetricS, extremum: Extremum, n_points: usize) -> DiagonalValue {
    let d = s.dim();
    let sign = match extremum {
        Extremum::Inf => 1.0,
        Extremum::Sup => -1.0,
    };
    let r = s.sqrt_inv();
    let objective = |w: &[f64]| -> (f64, Vec<f64>) {
        let u = r.mul_vec(w);
        let (v, g) = form.eval_with_grad(&u);
        // Chain rule through the symmetric S^{-1/2}.
        (sign * v, r.mul_vec(&g).into_iter().map(|x| sign * x).collect())
    };
    let starts = sphere_samples(d, n_points, 0x5eed);
    let mut scored: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|w| (objective(&w).0, w)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = scored[0].clone();
    for (v0, w0) in scored.into_iter().take(3) {
        let (mut v, mut w) = (v0, w0);
        let mut step = 0.5;
        for _ in 0..REFINE_STEPS {
            let (_, g) = objective(&w);
            let gw = dot(&g, &w);
            let tangent: Vec<f64> = g.iter().zip(&w).map(|(gi, wi)| gi - gw * wi).collect();
            if dot(&tangent, &tangent).sqrt() < 1e-14 {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut cand: Vec<f64> = w.iter().zip(&tangent).map(|(wi, ti)| wi - step * ti).collect();
                let nc = dot(&cand, &cand).sqrt();
                cand.iter_mut().for_each(|x| *x /= nc);
                let vc = objective(&cand).0;
                if vc < v {
                    v = vc;
                    w = cand;
                    improved = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if v < best.0 {
            best = (v, w);
        }
    }
    DiagonalValue {
        value: 0.5 * sign * best.0,
        direction: r.mul_vec(&best.1),
        extremum,
        sphere_points: n_points,
    }
}

/// `Λ_S(x, x) = ½ inf_{|u|_S=1} F_x(u)`.
pub fn diagonal_nils(model: &Model, s: &MetricS, x: &[f64]) -> Result<DiagonalValue> {
    let form = DiagonalForm::at(model, s, x)?;
    Ok(optimize_form(&form, s, Extremum::Inf, default_sphere_points(s.dim())))
}

/// u.s.c. envelope on the diagonal: `½ sup_{|u|_S=1} F_x(u)`.
pub fn usc_diagonal(model: &Model, s: &MetricS, x: &[f64]) -> Result<DiagonalValue> {
    let form = DiagonalForm::at(model, s, x)?;
    Ok(optimize_form(&form, s, Extremum::Sup, default_sphere_points(s.dim())))
}

/// `½ λ_min` of `S J + Jᵀ S` relative to `S`, the exact diagonal value for
/// constant diffusion.
pub fn generalized_min_eigen(model: &Model, s: &MetricS, x: &[f64]) -> Result<f64> {
    let form = DiagonalForm::at(model, s, x)?;
    let r = s.sqrt_inv();
    let c = r.mul(&form.a).mul(r).symmetrized();
    Ok(0.5 * symmetric_eigen(&c)?.min_value())
}

#[derive(Clone, Debug, Serialize)]
pub struct NecessaryConditionReport {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    /// `value ≤ 2 std_error`: the sampled necessary condition is not violated.
    pub consistent: bool,
}

/// Monte Carlo estimate of `∫ Λ_S(x, x) ν(dx)` over equilibrium samples.
pub fn necessary_condition(model: &Model, s: &MetricS, nu_samples: &[Vec<f64>]) -> Result<NecessaryConditionReport> {
    if nu_samples.is_empty() {
        return Err(Error::Precondition("no samples given".into()));
    }
    let vals = nu_samples
        .iter()
        .map(|x| diagonal_nils(model, s, x).map(|v| v.value))
        .collect::<Result<Vec<_>>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std_error = if vals.len() > 1 {
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(NecessaryConditionReport {
        value: mean,
        std_error,
        samples: vals.len(),
        consistent: mean <= 2.0 * std_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothCriterionReport {
    /// `½ sup_x sup_{|u|_S=1} F_x(u)` over the grid.
    pub sup_estimate: f64,
    pub arg: Vec<f64>,
    pub negative: bool,
    pub grid_per_axis: usize,
    pub evidence: &'static str,
}

/// Grid points of a box, `n` per axis (endpoints included).
pub fn box_grid(bounds: &[(f64, f64)], n: usize) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let n = n.max(1);
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; d];
            for (k, (lo, hi)) in bounds.iter().enumerate() {
                let i = idx % n;
                idx /= n;
                p[k] = if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            }
            p
        })
        .collect()
}

/// Sampled `sup_x sup_u` of the diagonal form over a box.
pub fn smooth_criterion_sup(model: &Model, s: &MetricS, bounds: &[(f64, f64)], grid: usize) -> Result<SmoothCriterionReport> {
    if bounds.len() != model.d() {
        return Err(Error::Dimension("box must have one interval per coordinate".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![];
    for x in box_grid(bounds, grid) {
        let v = usc_diagonal(model, s, &x)?.value;
        if v > best {
            best = v;
            arg = x;
        }
    }
    Ok(SmoothCriterionReport {
        sup_estimate: best,
        arg,
        negative: best < 0.0,
        grid_per_axis: grid,
        evidence: "grid-sampled supremum; not a proof",
    })
}
