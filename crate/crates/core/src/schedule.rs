//! Step sequences, weights, and the correlated noise feeding the
//! Richardson-Romberg pair of Euler schemes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{symmetric_eigen, KahanSum, Matrix};
use crate::{Error, Result};

/// Admissibility slack for negative eigenvalues of PSD inputs.
pub const PSD_TOL: f64 = 1e-10;

/// Polynomial step sequence `γ_n = C n^{-μ}` with running power sums.
#[derive(Clone, Debug)]
pub struct StepSchedule {
    c: f64,
    mu: f64,
    n: u64,
    extra_r: Option<u32>,
    gamma: KahanSum,
    gamma2: KahanSum,
    gamma3: KahanSum,
    gamma_extra: KahanSum,
}

impl StepSchedule {
    pub fn new(c: f64, mu: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::param("C", "must be positive"));
        }
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::param("mu", "must lie in (0, 1]"));
        }
        Ok(StepSchedule {
            c,
            mu,
            n: 0,
            extra_r: None,
            gamma: KahanSum::new(),
            gamma2: KahanSum::new(),
            gamma3: KahanSum::new(),
            gamma_extra: KahanSum::new(),
        })
    }

    /// Also track `Γ_n^{(r)}` for one additional power `r`.
    pub fn with_extra_power(mut self, r: u32) -> Self {
        self.extra_r = Some(r);
        self
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Number of steps taken so far.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// `γ_k` for an arbitrary index `k ≥ 1`.
    #[inline]
    pub fn gamma_at(&self, k: u64) -> f64 {
        self.c * (k as f64).powf(-self.mu)
    }

    /// Advance to the next index and return its step.
    #[inline]
    pub fn advance(&mut self) -> f64 {
        self.n += 1;
        let g = self.gamma_at(self.n);
        self.gamma.add(g);
        let g2 = g * g;
        self.gamma2.add(g2);
        self.gamma3.add(g2 * g);
        if let Some(r) = self.extra_r {
            self.gamma_extra.add(g.powi(r as i32));
        }
        g
    }

    /// `Γ_n = Σ_{k≤n} γ_k`.
    pub fn big_gamma(&self) -> f64 {
        self.gamma.value()
    }

    /// `Γ_n^{(r)} = Σ_{k≤n} γ_k^r` for `r ∈ {1, 2, 3}` or the extra power.
    pub fn big_gamma_pow(&self, r: u32) -> Option<f64> {
        match r {
            1 => Some(self.gamma.value()),
            2 => Some(self.gamma2.value()),
            3 => Some(self.gamma3.value()),
            _ if self.extra_r == Some(r) => Some(self.gamma_extra.value()),
            _ => None,
        }
    }
}

/// Weights `η_k` of the empirical measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `η_k = γ_k`.
    #[default]
    Step,
    /// `η_k = 1`.
    Uniform,
}

impl WeightScheme {
    #[inline]
    pub fn weight(self, gamma: f64) -> f64 {
        match self {
            WeightScheme::Step => gamma,
            WeightScheme::Uniform => 1.0,
        }
    }
}

/// Symmetric non-negative square root of a symmetric PSD matrix.
pub fn matrix_sqrt_psd(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Dimension("matrix square root needs a square matrix".into()));
    }
    if !a.is_symmetric(1e-12 * (1.0 + a.max_abs())) {
        return Err(Error::Dimension("matrix square root needs a symmetric matrix".into()));
    }
    let eig = symmetric_eigen(&a.symmetrized())?;
    let min = eig.min_value();
    if min < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()).symmetrized())
}

/// Correlation `ρ` between the two schemes' noises and the matching `T`
/// with `T Tᵀ = I - ρᵀρ`. `T` is the symmetric root.
#[derive(Clone, Debug, Serialize)]
pub struct CorrelationSpec {
    rho: Matrix,
    t: Matrix,
}

pub fn make_correlation(rho: Matrix) -> Result<CorrelationSpec> {
    if !rho.is_square() {
        return Err(Error::Dimension("rho must be q x q".into()));
    }
    let q = rho.rows();
    let gram = Matrix::identity(q).sub(&rho.transpose().mul(&rho)).symmetrized();
    let t = matrix_sqrt_psd(&gram).map_err(|e| match e {
        Error::NotPsd { min_eigenvalue } => Error::Parameter {
            name: "rho".into(),
            reason: format!(
                "I - rho^T rho is not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
        },
        other => other,
    })?;
    Ok(CorrelationSpec { rho, t })
}

impl CorrelationSpec {
    /// `ρ = s I_q`.
    pub fn scalar(q: usize, s: f64) -> Result<Self> {
        make_correlation(Matrix::scalar(q, s))
    }

    pub fn q(&self) -> usize {
        self.rho.rows()
    }

    pub fn rho(&self) -> &Matrix {
        &self.rho
    }

    pub fn t(&self) -> &Matrix {
        &self.t
    }

    /// True when `ρ = I` exactly, so both schemes see the same noise.
    pub fn is_identity(&self) -> bool {
        self.rho == Matrix::identity(self.q())
    }

    /// `out = ρᵀ z + T v`.
    #[inline]
    pub fn correlate(&self, z: &[f64], v: &[f64], out: &mut [f64]) {
        let q = self.q();
        let r = self.rho.as_slice();
        let t = self.t.as_slice();
        for i in 0..q {
            let mut acc = 0.0;
            for k in 0..q {
                acc += r[k * q + i] * z[k] + t[i * q + k] * v[k];
            }
            out[i] = acc;
        }
    }
}

/// Distribution of the driving innovations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Independent ±1 coordinates. Not admissible for bias studies, since it
    /// changes the fourth and sixth moments entering the bias constants.
    Rademacher,
}

/// Innovations consumed by one macro-step of the Richardson-Romberg pair.
#[derive(Clone, Debug, Default)]
pub struct MacroNoise {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// `U_n = (Z_{2n-1} + Z_{2n}) / √2`.
    pub u: Vec<f64>,
    /// `Z^{(ρ)}_{2n-1}`.
    pub zr1: Vec<f64>,
    /// `Z^{(ρ)}_{2n}`.
    pub zr2: Vec<f64>,
}

/// Seeded noise source. Replication `r` uses ChaCha stream `r` of the seed,
/// so substreams are independent and reproducible.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    kind: NoiseKind,
    buf: MacroNoise,
}

impl NoiseStream {
    pub fn new(seed: u64, replication: u64, kind: NoiseKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replication);
        NoiseStream {
            rng,
            kind,
            buf: MacroNoise::default(),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    #[inline]
    pub fn sample(&mut self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => self.rng.sample(StandardNormal),
            NoiseKind::Rademacher => {
                if self.rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.sample();
        }
    }

    /// Draw one macro-step of coupled noise.
    pub fn next_noise(&mut self, spec: &CorrelationSpec) -> &MacroNoise {
        let q = spec.q();
        let mut b = std::mem::take(&mut self.buf);
        for v in [&mut b.z1, &mut b.z2, &mut b.v1, &mut b.v2, &mut b.u, &mut b.zr1, &mut b.zr2] {
            v.resize(q, 0.0);
        }
        self.fill(&mut b.z1);
        self.fill(&mut b.z2);
        self.fill(&mut b.v1);
        self.fill(&mut b.v2);
        for i in 0..q {
            b.u[i] = (b.z1[i] + b.z2[i]) / std::f64::consts::SQRT_2;
        }
        spec.correlate(&b.z1, &b.v1, &mut b.zr1);
        spec.correlate(&b.z2, &b.v2, &mut b.zr2);
        self.buf = b;
        &self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_sums_match_direct_summation() {
        let mut s = StepSchedule::new(0.8, 0.37).unwrap().with_extra_power(5);
        for _ in 0..1000 {
            s.advance();
        }
        for r in [1u32, 2, 3, 5] {
            let direct: f64 = (1..=1000u64).map(|k| (0.8 * (k as f64).powf(-0.37)).powi(r as i32)).sum();
            let got = s.big_gamma_pow(r).unwrap();
            assert!((got - direct).abs() <= 1e-12 * direct, "r={r}");
        }
        assert!(s.big_gamma_pow(4).is_none());
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(StepSchedule::new(1.0, 1.5).is_err());
        assert!(StepSchedule::new(1.0, 0.0).is_err());
        assert!(StepSchedule::new(0.0, 0.5).is_err());
        assert!(StepSchedule::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn steps_decrease_and_sums_increase() {
        let mut s = StepSchedule::new(1.0, 0.2).unwrap();
        let mut last_g = f64::INFINITY;
        let mut last_sum = 0.0;
        for _ in 0..500 {
            let g = s.advance();
            assert!(g <= last_g);
            assert!(s.big_gamma() > last_sum);
            last_g = g;
            last_sum = s.big_gamma();
        }
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(matrix_sqrt_psd(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert_eq!(matrix_sqrt_psd(&Matrix::zeros(2, 2)).unwrap(), Matrix::zeros(2, 2));
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let b = matrix_sqrt_psd(&a).unwrap();
        assert!(b.mul(&b).sub(&a).max_abs() < 1e-10);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e1 = b.mul_vec(&[s, s]);
        let e2 = b.mul_vec(&[s, -s]);
        assert!((e1[0] - 3f64.sqrt() * s).abs() < 1e-12 && (e1[1] - 3f64.sqrt() * s).abs() < 1e-12);
        assert!((e2[0] - s).abs() < 1e-12 && (e2[1] + s).abs() < 1e-12);
        let bad = Matrix::diag(&[1.0, -0.1]);
        assert!(matches!(matrix_sqrt_psd(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn correlation_examples() {
        assert_eq!(*CorrelationSpec::scalar(2, 0.0).unwrap().t(), Matrix::identity(2));
        assert_eq!(*CorrelationSpec::scalar(2, 1.0).unwrap().t(), Matrix::zeros(2, 2));
        let c = CorrelationSpec::scalar(1, 0.6).unwrap();
        assert!((c.t()[(0, 0)] - 0.8).abs() < 1e-15);
        assert!(CorrelationSpec::scalar(1, 1.2).is_err());
    }

    #[test]
    fn identity_correlation_copies_noise() {
        let spec = CorrelationSpec::scalar(2, 1.0).unwrap();
        let mut s = NoiseStream::new(3, 0, NoiseKind::Gaussian);
        for _ in 0..100 {
            let n = s.next_noise(&spec);
            assert_eq!(n.zr1, n.z1);
            assert_eq!(n.zr2, n.z2);
            for i in 0..2 {
                assert_eq!(n.u[i], (n.z1[i] + n.z2[i]) / std::f64::consts::SQRT_2);
            }
        }
        let spec = CorrelationSpec::scalar(2, 0.0).unwrap();
        let n = s.next_noise(&spec);
        assert_eq!(n.zr1, n.v1);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let spec = CorrelationSpec::scalar(1, 0.3).unwrap();
        let mut a = NoiseStream::new(9, 2, NoiseKind::Gaussian);
        let mut b = NoiseStream::new(9, 2, NoiseKind::Gaussian);
        let mut c = NoiseStream::new(9, 3, NoiseKind::Gaussian);
        let xa = a.next_noise(&spec).zr2.clone();
        assert_eq!(xa, b.next_noise(&spec).zr2);
        assert_ne!(xa, c.next_noise(&spec).zr2);
    }

    #[test]
    fn rademacher_takes_unit_values() {
        let mut s = NoiseStream::new(1, 0, NoiseKind::Rademacher);
        for _ in 0..100 {
            assert_eq!(s.sample().abs(), 1.0);
        }
    }
}
