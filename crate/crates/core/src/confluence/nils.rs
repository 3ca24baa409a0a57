//! Off-diagonal pair functionals: the NILS exponent `Λ_S` and the
//! `(S, θ)`-confluence function `Ψ_{θ,S}`.

use std::fmt;
use std::sync::Arc;

use crate::confluence::MetricS;
use crate::model::Model;
use crate::{Error, Result};

/// A non-negative weight `θ: (0, ∞) → ℝ₊`.
#[derive(Clone)]
pub enum ThetaFunction {
    Constant(f64),
    Custom {
        label: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ThetaFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaFunction::Constant(c) => write!(f, "Constant({c})"),
            ThetaFunction::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl ThetaFunction {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::param("theta", "must be a non-negative constant"));
        }
        Ok(ThetaFunction::Constant(c))
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ThetaFunction::Custom {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    /// `θ(u) = 1 + κ / ln u` below `eps0`, `1 + κ / ln eps0` above it.
    pub fn log_corrected(kappa: f64, eps0: f64) -> Self {
        ThetaFunction::custom(format!("1+{kappa}/ln(u), u<={eps0}"), move |u| {
            (1.0 + kappa / u.min(eps0).ln()).max(0.0)
        })
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            ThetaFunction::Constant(c) => *c,
            ThetaFunction::Custom { f, .. } => f(u),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ThetaFunction::Constant(c) => format!("{c}"),
            ThetaFunction::Custom { label, .. } => label.clone(),
        }
    }

    /// Check non-negativity on a geometric probe grid over `[1e-12, 1e6]`.
    pub fn check_nonnegative(&self) -> Result<()> {
        for k in -120..=60 {
            let u = 10f64.powf(k as f64 / 10.0);
            let v = self.eval(u);
            if !(v >= 0.0) {
                return Err(Error::param("theta", format!("theta({u:e}) = {v} is negative")));
            }
        }
        Ok(())
    }
}

/// Pieces shared by `Λ_S` and `Ψ_{θ,S}` at a pair.
#[derive(Clone, Copy, Debug)]
pub struct PairTerms {
    /// `(b(x) - b(y) | x - y)_S`.
    pub drift: f64,
    /// `‖σ(x) - σ(y)‖_S²`.
    pub sigma_fro: f64,
    /// `|(σᵀ(x) - σᵀ(y)) S (x - y)|²`.
    pub projection: f64,
    /// `|x - y|_S²`.
    pub dist2: f64,
}

pub fn pair_terms(model: &Model, s: &MetricS, x: &[f64], y: &[f64]) -> Result<PairTerms> {
    let (d, q) = (model.d(), model.q());
    if x.len() != d || y.len() != d || s.dim() != d {
        return Err(Error::Dimension(format!("pair points and S must have dimension {d}")));
    }
    let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let dist2 = s.norm2(&delta);
    let threshold = s.diagonal_threshold(x, y);
    if dist2.sqrt() < threshold {
        return Err(Error::Diagonal {
            distance: dist2.sqrt(),
            threshold,
        });
    }
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    model.drift_into(x, &mut bx);
    model.drift_into(y, &mut by);
    let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
    let mut sx = vec![0.0; d * q];
    let mut sy = vec![0.0; d * q];
    model.diffusion_into(x, &mut sx);
    model.diffusion_into(y, &mut sy);
    let ds: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
    let sd = s.apply(&delta);
    let mut projection = 0.0;
    for l in 0..q {
        let mut v = 0.0;
        for i in 0..d {
            v += ds[i * q + l] * sd[i];
        }
        projection += v * v;
    }
    Ok(PairTerms {
        drift: s.inner(&db, &delta),
        sigma_fro: s.fro2(&ds, q),
        projection,
        dist2,
    })
}

/// `Λ_S(x, y)`; fails inside the diagonal band.
pub fn nils(model: &Model, s: &MetricS, x: &[f64], y: &[f64]) -> Result<f64> {
    let t = pair_terms(model, s, x, y)?;
    Ok(t.drift / t.dist2 + 0.5 * t.sigma_fro / t.dist2 - t.projection / (t.dist2 * t.dist2))
}

/// `Ψ_{θ,S}(x, y)`; fails inside the diagonal band.
pub fn psi(model: &Model, s: &MetricS, theta: &ThetaFunction, x: &[f64], y: &[f64]) -> Result<f64> {
    let t = pair_terms(model, s, x, y)?;
    Ok(t.drift + 0.5 * t.sigma_fro - theta.eval(t.dist2) * t.projection / t.dist2)
}

/// Model-free NILS evaluator carried by builtin metadata when present,
/// otherwise the numeric definition.
pub fn nils_or_closed_form(model: &Model, s: &MetricS, x: &[f64], y: &[f64]) -> Result<f64> {
    match &model.info.nils {
        Some(c) if c.s == *s.matrix() => {
            if s.is_near_diagonal(x, y) {
                return Err(Error::Diagonal {
                    distance: s.distance(x, y),
                    threshold: s.diagonal_threshold(x, y),
                });
            }
            Ok((c.lambda)(x, y))
        }
        _ => nils(model, s, x, y),
    }
}
