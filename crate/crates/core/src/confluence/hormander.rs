//! Numerical rank of the Hörmander family: the Stratonovich diffusion fields
//! `A₁..A_q` and left-nested Lie brackets of `A₀..A_q`.

use std::sync::Arc;

use serde::Serialize;

use crate::linalg::{singular_values, Matrix};
use crate::model::Model;
use crate::{Error, Result};

pub const MAX_BRACKET_LENGTH: usize = 3;
pub const RANK_REL_TOL: f64 = 1e-6;

type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Debug, Serialize)]
pub struct HormanderReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Bracket words, `0` for the Stratonovich drift.
    pub words: Vec<Vec<usize>>,
}

/// `A₀ = b - ½ Σ_{l,j} σ_jl ∂_j σ_·l`.
fn stratonovich_drift(model: &Model) -> VectorField {
    let m = model.clone();
    Arc::new(move |x: &[f64]| {
        let (d, q) = (m.d(), m.q());
        let mut a = m.drift(x);
        let s = m.diffusion(x);
        let g = m.sigma_gradient(x);
        for (i, ai) in a.iter_mut().enumerate() {
            let mut corr = 0.0;
            for l in 0..q {
                for j in 0..d {
                    corr += s[(j, l)] * g[(i * q + l) * d + j];
                }
            }
            *ai -= 0.5 * corr;
        }
        a
    })
}

fn column_field(model: &Model, l: usize) -> VectorField {
    let m = model.clone();
    Arc::new(move |x: &[f64]| {
        let s = m.diffusion(x);
        (0..m.d()).map(|i| s[(i, l)]).collect()
    })
}

/// `[V, W] = DW·V - DV·W` with central differences along `V` and `W`.
fn bracket(v: VectorField, w: VectorField, depth: usize, scale: f64) -> VectorField {
    let h0 = f64::EPSILON.powf(1.0 / (3.0 + depth as f64)) * scale;
    Arc::new(move |x: &[f64]| {
        let vx = v(x);
        let wx = w(x);
        let dir = |f: &VectorField, u: &[f64]| -> Vec<f64> {
            let n = u.iter().map(|t| t * t).sum::<f64>().sqrt();
            if n == 0.0 {
                return vec![0.0; x.len()];
            }
            let h = h0 / n;
            let xp: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - h * b).collect();
            f(&xp).iter().zip(f(&xm)).map(|(p, m)| (p - m) / (2.0 * h)).collect()
        };
        let dw_v = dir(&w, &vx);
        let dv_w = dir(&v, &wx);
        dw_v.iter().zip(dv_w).map(|(a, b)| a - b).collect()
    })
}

fn words(q: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1..=q).map(|l| vec![l]).collect();
    let mut frontier: Vec<Vec<usize>> = (0..=q).map(|l| vec![l]).collect();
    for _ in 2..=n {
        let mut next = Vec::new();
        for w in &frontier {
            for l in 0..=q {
                let mut word = w.clone();
                word.push(l);
                // Words made of A₀ alone vanish; a repeated last pair too.
                if word.iter().all(|&c| c == 0) || word[word.len() - 2] == l {
                    continue;
                }
                next.push(word);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn family_at(model: &Model, x: &[f64], n: usize, step_mult: f64) -> Result<(Matrix, Vec<Vec<usize>>)> {
    let q = model.q();
    let scale = step_mult * (1.0 + x.iter().map(|t| t * t).sum::<f64>().sqrt());
    let base: Vec<VectorField> = std::iter::once(stratonovich_drift(model))
        .chain((0..q).map(|l| column_field(model, l)))
        .collect();
    let ws = words(q, n);
    let mut rows = Vec::with_capacity(ws.len());
    for w in &ws {
        let mut f = base[w[0]].clone();
        for (k, &c) in w.iter().enumerate().skip(1) {
            f = bracket(f, base[c].clone(), k, scale);
        }
        let v = f(x);
        if !v.iter().all(|t| t.is_finite()) {
            return Err(Error::Derivative(format!("bracket {w:?} is not finite at {x:?}")));
        }
        rows.push(v);
    }
    Ok((Matrix::from_rows(&rows)?, ws))
}

fn numerical_rank(sv: &[f64]) -> usize {
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_REL_TOL * top).count()
}

/// Rank of `{A₁..A_q} ∪ {brackets of length ≤ N}` at `x`, checked against
/// a doubled finite-difference step.
pub fn hormander_analysis(model: &Model, x: &[f64], max_bracket_length: usize) -> Result<HormanderReport> {
    if x.len() != model.d() {
        return Err(Error::Dimension(format!("x must have dimension {}", model.d())));
    }
    if !(1..=MAX_BRACKET_LENGTH).contains(&max_bracket_length) {
        return Err(Error::param("max_bracket_length", "must be in 1..=3"));
    }
    let (fam, ws) = family_at(model, x, max_bracket_length, 1.0)?;
    let sv = singular_values(&fam)?;
    let rank = numerical_rank(&sv);
    let (fam2, _) = family_at(model, x, max_bracket_length, 2.0)?;
    let rank2 = numerical_rank(&singular_values(&fam2)?);
    if rank != rank2 {
        return Err(Error::Derivative(format!(
            "bracket rank changes with the difference step ({rank} vs {rank2}) at {x:?}"
        )));
    }
    Ok(HormanderReport {
        rank,
        singular_values: sv,
        words: ws,
    })
}

pub fn hormander_rank(model: &Model, x: &[f64], max_bracket_length: usize) -> Result<usize> {
    hormander_analysis(model, x, max_bracket_length).map(|r| r.rank)
}
