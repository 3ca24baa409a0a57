//! The metric `|v|_S = sqrt(vᵀ S v)` used by every criterion.

use serde::Serialize;

use crate::linalg::{symmetric_eigen, Matrix};
use crate::{Error, Result};

/// Relative size of the excluded band around the diagonal.
pub const DIAG_REL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct MetricS {
    s: Matrix,
    #[serde(skip)]
    sqrt: Matrix,
    #[serde(skip)]
    sqrt_inv: Matrix,
}

impl MetricS {
    pub fn new(s: Matrix) -> Result<Self> {
        if !s.is_square() || !s.is_symmetric(1e-12 * (1.0 + s.max_abs())) {
            return Err(Error::param("S", "must be a symmetric square matrix"));
        }
        let eig = symmetric_eigen(&s)?;
        if eig.min_value() <= 0.0 {
            return Err(Error::param(
                "S",
                format!("must be positive definite (min eigenvalue {:e})", eig.min_value()),
            ));
        }
        let sqrt = eig.reconstruct_with(f64::sqrt).symmetrized();
        let sqrt_inv = eig.reconstruct_with(|l| 1.0 / l.sqrt()).symmetrized();
        Ok(MetricS { s, sqrt, sqrt_inv })
    }

    pub fn identity(d: usize) -> Self {
        MetricS {
            s: Matrix::identity(d),
            sqrt: Matrix::identity(d),
            sqrt_inv: Matrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.s
    }

    pub fn sqrt(&self) -> &Matrix {
        &self.sqrt
    }

    pub fn sqrt_inv(&self) -> &Matrix {
        &self.sqrt_inv
    }

    /// `(u|v)_S = uᵀ S v`.
    #[inline]
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim();
        let s = self.s.as_slice();
        let mut acc = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for k in 0..d {
                row += s[i * d + k] * v[k];
            }
            acc += u[i] * row;
        }
        acc
    }

    #[inline]
    pub fn norm2(&self, v: &[f64]) -> f64 {
        self.inner(v, v)
    }

    #[inline]
    pub fn norm(&self, v: &[f64]) -> f64 {
        self.norm2(v).sqrt()
    }

    /// `S v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.s.mul_vec(v)
    }

    /// `‖A‖_S² = Tr(Aᵀ S A)` for a row-major `d × q` matrix.
    pub fn fro2(&self, a: &[f64], q: usize) -> f64 {
        let d = self.dim();
        let s = self.s.as_slice();
        let mut acc = 0.0;
        for l in 0..q {
            for i in 0..d {
                let mut row = 0.0;
                for k in 0..d {
                    row += s[i * d + k] * a[k * q + l];
                }
                acc += a[i * q + l] * row;
            }
        }
        acc
    }

    /// `|x - y|_S`.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.norm(&diff)
    }

    /// Width of the band around the diagonal where pair functionals are
    /// treated as undefined: `1e-8 (1 + |x|_S + |y|_S)`.
    pub fn diagonal_threshold(&self, x: &[f64], y: &[f64]) -> f64 {
        DIAG_REL * (1.0 + self.norm(x) + self.norm(y))
    }

    pub fn is_near_diagonal(&self, x: &[f64], y: &[f64]) -> bool {
        self.distance(x, y) < self.diagonal_threshold(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_matches_quadratic_form() {
        let s = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let m = MetricS::new(s.clone()).unwrap();
        let v = [0.3, -1.7];
        assert!((m.norm2(&v) - s.quad_form(&v)).abs() < 1e-12);
        assert!(m.sqrt().mul(m.sqrt()).sub(&s).max_abs() < 1e-12);
        assert!(m.sqrt_inv().mul(&s).mul(m.sqrt_inv()).sub(&Matrix::identity(2)).max_abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(MetricS::new(Matrix::diag(&[1.0, 0.0])).is_err());
        assert!(MetricS::new(Matrix::diag(&[1.0, -2.0])).is_err());
    }

    #[test]
    fn fro2_is_trace_form() {
        let m = MetricS::new(Matrix::diag(&[1.0, 3.0])).unwrap();
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let am = Matrix::from_row_major(2, 3, a.to_vec()).unwrap();
        let expect = am.transpose().mul(m.matrix()).mul(&am).trace();
        assert!((m.fro2(&a, 3) - expect).abs() < 1e-12);
    }
}
