//! SDE models `dX = b(X) dt + σ(X) dW` and the builtin model zoo.
//!
//! Coefficients are evaluated on raw coordinate slices so the integrators can
//! run without allocating. The diffusion matrix is written row-major (`d` rows,
//! `q` columns); the diffusion gradient uses the layout
//! `grad[(i * q + l) * d + k] = ∂σ_il / ∂x_k`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::{Error, Result};

pub type Field = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PairField = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// `(x, k) -> g^{(k)}(x)` for a scalar function of one variable.
pub type Derivatives1d = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;
pub type Params = BTreeMap<String, f64>;

/// Closed-form NILS exponent together with the metric it is stated for.
#[derive(Clone)]
pub struct ClosedFormNils {
    pub s: Matrix,
    pub lambda: PairField,
}

/// A Poisson pair `A g = f - ν(f)` known in closed form (one-dimensional).
#[derive(Clone)]
pub struct KnownPoisson {
    pub label: String,
    pub f: Derivatives1d,
    pub nu_f: f64,
    pub g: Derivatives1d,
}

/// Metadata carried alongside a model.
#[derive(Clone, Default)]
pub struct ModelInfo {
    pub params: Params,
    /// Derived constants (e.g. Baxendale's `lambda` and `alpha`).
    pub derived: Params,
    /// Log of the invariant density up to an additive constant.
    pub log_density: Option<ScalarField>,
    pub nils: Option<ClosedFormNils>,
    pub poisson: Vec<KnownPoisson>,
}

#[derive(Clone)]
pub struct Model {
    name: String,
    d: usize,
    q: usize,
    drift: Field,
    diffusion: Field,
    jacobian: Option<Field>,
    sigma_gradient: Option<Field>,
    pub info: ModelInfo,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("q", &self.q)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("analytic_sigma_gradient", &self.sigma_gradient.is_some())
            .field("params", &self.info.params)
            .finish()
    }
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

impl Model {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        q: usize,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "state dimension must be positive"));
        }
        if q == 0 {
            return Err(Error::param("q", "noise dimension must be positive"));
        }
        Ok(Model {
            name: name.into(),
            d,
            q,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            jacobian: None,
            sigma_gradient: None,
            info: ModelInfo::default(),
        })
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_sigma_gradient(
        mut self,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma_gradient = Some(Arc::new(grad));
        self
    }

    pub fn with_info(mut self, info: ModelInfo) -> Self {
        self.info = info;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_analytic_sigma_gradient(&self) -> bool {
        self.sigma_gradient.is_some()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.drift_into(x, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64]) -> Matrix {
        let mut out = vec![0.0; self.d * self.q];
        self.diffusion_into(x, &mut out);
        Matrix::from_row_major(self.d, self.q, out).expect("diffusion buffer has d*q entries")
    }

    /// Drift Jacobian `J[i][k] = ∂b_i/∂x_k`, analytic when available.
    pub fn jacobian(&self, x: &[f64]) -> Matrix {
        let mut out = vec![0.0; self.d * self.d];
        match &self.jacobian {
            Some(j) => j(x, &mut out),
            None => self.fd_jacobian_into(x, &mut out),
        }
        Matrix::from_row_major(self.d, self.d, out).expect("jacobian buffer has d*d entries")
    }

    /// Diffusion gradient, analytic when available.
    pub fn sigma_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.q * self.d];
        match &self.sigma_gradient {
            Some(g) => g(x, &mut out),
            None => self.fd_sigma_gradient_into(x, &mut out),
        }
        out
    }

    pub fn fd_jacobian(&self, x: &[f64]) -> Matrix {
        let mut out = vec![0.0; self.d * self.d];
        self.fd_jacobian_into(x, &mut out);
        Matrix::from_row_major(self.d, self.d, out).expect("jacobian buffer has d*d entries")
    }

    pub fn fd_sigma_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.q * self.d];
        self.fd_sigma_gradient_into(x, &mut out);
        out
    }

    fn fd_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut xp = x.to_vec();
        let mut bp = vec![0.0; d];
        let mut bm = vec![0.0; d];
        for k in 0..d {
            let h = fd_step(x[k]);
            xp[k] = x[k] + h;
            self.drift_into(&xp, &mut bp);
            xp[k] = x[k] - h;
            self.drift_into(&xp, &mut bm);
            xp[k] = x[k];
            for i in 0..d {
                out[i * d + k] = (bp[i] - bm[i]) / (2.0 * h);
            }
        }
    }

    fn fd_sigma_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (d, q) = (self.d, self.q);
        let mut xp = x.to_vec();
        let mut sp = vec![0.0; d * q];
        let mut sm = vec![0.0; d * q];
        for k in 0..d {
            let h = fd_step(x[k]);
            xp[k] = x[k] + h;
            self.diffusion_into(&xp, &mut sp);
            xp[k] = x[k] - h;
            self.diffusion_into(&xp, &mut sm);
            xp[k] = x[k];
            for il in 0..d * q {
                out[il * d + k] = (sp[il] - sm[il]) / (2.0 * h);
            }
        }
    }

    /// Compare analytic derivatives with central differences at `n` uniform
    /// points of `[-half_width, half_width]^d`. Returns the worst relative
    /// discrepancy, measured as `|a - fd| / max(1, |a|)`.
    pub fn derivative_discrepancy(&self, n: usize, half_width: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut x = vec![0.0; self.d];
        for _ in 0..n {
            for xi in x.iter_mut() {
                *xi = rng.random_range(-half_width..half_width);
            }
            if self.jacobian.is_some() {
                let a = self.jacobian(&x);
                let f = self.fd_jacobian(&x);
                for (u, v) in a.as_slice().iter().zip(f.as_slice()) {
                    worst = worst.max((u - v).abs() / u.abs().max(1.0));
                }
            }
            if self.sigma_gradient.is_some() {
                let a = self.sigma_gradient(&x);
                let f = self.fd_sigma_gradient(&x);
                for (u, v) in a.iter().zip(&f) {
                    worst = worst.max((u - v).abs() / u.abs().max(1.0));
                }
            }
        }
        worst
    }
}

fn require(cond: bool, name: &str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::param(name, reason))
    }
}

fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// One-dimensional Ornstein-Uhlenbeck process `dX = -X dt + σ dW`.
pub fn make_ou(sigma: f64) -> Result<Model> {
    require(sigma > 0.0 && sigma.is_finite(), "sigma", "must be positive")?;
    let s2 = sigma * sigma;
    let identity: Derivatives1d = Arc::new(|x, k| match k {
        0 => x,
        1 => 1.0,
        _ => 0.0,
    });
    let square: Derivatives1d = Arc::new(|x, k| match k {
        0 => x * x,
        1 => 2.0 * x,
        2 => 2.0,
        _ => 0.0,
    });
    let info = ModelInfo {
        params: params(&[("sigma", sigma)]),
        log_density: Some(Arc::new(move |x: &[f64]| -x[0] * x[0] / s2)),
        poisson: vec![
            KnownPoisson {
                label: "x".into(),
                f: identity,
                nu_f: 0.0,
                g: Arc::new(|x, k| match k {
                    0 => -x,
                    1 => -1.0,
                    _ => 0.0,
                }),
            },
            KnownPoisson {
                label: "x^2".into(),
                f: square,
                nu_f: 0.5 * s2,
                g: Arc::new(|x, k| match k {
                    0 => -0.5 * x * x,
                    1 => -x,
                    2 => -1.0,
                    _ => 0.0,
                }),
            },
        ],
        ..Default::default()
    };
    Ok(Model::new(
        "ou",
        1,
        1,
        |x, out| out[0] = -x[0],
        move |_, out| out[0] = sigma,
    )?
    .with_jacobian(|_, out| out[0] = -1.0)
    .with_sigma_gradient(|_, out| out[0] = 0.0)
    .with_info(info))
}

/// Closed-form NILS exponent of the double-well gradient system (metric `I`).
pub fn double_well_nils(x: &[f64], y: &[f64]) -> f64 {
    let mut nx = 0.0;
    let mut ny = 0.0;
    let mut proj = 0.0;
    let mut dist2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        nx += a * a;
        ny += b * b;
        proj += (a + b) * (a - b);
        dist2 += (a - b) * (a - b);
    }
    1.0 - 0.5 * ((nx + ny) + proj * proj / dist2)
}

/// Gradient system with potential `U(x) = (|x|² - 1)² / 4` and additive noise.
pub fn make_double_well(sigma: f64, d: usize) -> Result<Model> {
    require(sigma > 0.0 && sigma.is_finite(), "sigma", "must be positive")?;
    require(d >= 1, "d", "must be at least 1")?;
    let s2 = sigma * sigma;
    let info = ModelInfo {
        params: params(&[("sigma", sigma), ("d", d as f64)]),
        log_density: Some(Arc::new(move |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            -2.0 * (r2 - 1.0).powi(2) / 4.0 / s2
        })),
        nils: Some(ClosedFormNils {
            s: Matrix::identity(d),
            lambda: Arc::new(double_well_nils),
        }),
        ..Default::default()
    };
    Ok(Model::new(
        "double_well",
        d,
        d,
        |x, out| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            for (o, v) in out.iter_mut().zip(x) {
                *o = -v * (r2 - 1.0);
            }
        },
        move |_, out| {
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = sigma;
            }
        },
    )?
    .with_jacobian(move |x, out| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..d {
            for k in 0..d {
                let delta = if i == k { 1.0 } else { 0.0 };
                out[i * d + k] = -(r2 - 1.0) * delta - 2.0 * x[i] * x[k];
            }
        }
    })
    .with_sigma_gradient(|_, out| out.fill(0.0))
    .with_info(info))
}

/// The drift exactly as printed for the two-dimensional counterexample:
/// `(x 1{|x|≤1} - x/|x| 1{|x|≥1})(1 - |x|)`, with value 0 at the origin.
pub fn polar_printed_drift(x: &[f64]) -> [f64; 2] {
    let r = x[0].hypot(x[1]);
    if r <= 1.0 {
        [x[0] * (1.0 - r), x[1] * (1.0 - r)]
    } else {
        let s = -(1.0 - r) / r;
        [x[0] * s, x[1] * s]
    }
}

/// Radial rate `min(r, 1)(1 - r)` of the counterexample in polar form.
fn polar_beta(r: f64) -> f64 {
    r.min(1.0) * (1.0 - r)
}

/// Two-dimensional model whose polar form is
/// `dr = min(r,1)(1-r)(dt + θ dW¹)`, `dφ = c dW²`.
///
/// The Cartesian coefficients are obtained from the polar system with Itô's
/// formula: drift `β(r) x/r - (c²/2) x`, diffusion columns `θ β(r) x/r` and
/// `c (-x₂, x₁)`. The unit circle is invariant and shared-noise pairs keep
/// their angular gap forever.
pub fn make_polar_counterexample(theta: f64, c: f64) -> Result<Model> {
    require(
        theta > 0.0 && theta < std::f64::consts::SQRT_2,
        "theta",
        "must lie in (0, sqrt(2))",
    )?;
    require(c > 0.0 && c.is_finite(), "c", "must be positive")?;
    let half_c2 = 0.5 * c * c;
    let info = ModelInfo {
        params: params(&[("theta", theta), ("c", c)]),
        ..Default::default()
    };
    Ok(Model::new(
        "polar_counterexample",
        2,
        2,
        move |x, out| {
            let r = x[0].hypot(x[1]);
            // β(r)/r extends continuously to 1 at the origin.
            let k = if r > 0.0 { polar_beta(r) / r } else { 1.0 };
            out[0] = (k - half_c2) * x[0];
            out[1] = (k - half_c2) * x[1];
        },
        move |x, out| {
            let r = x[0].hypot(x[1]);
            let k = if r > 0.0 { polar_beta(r) / r } else { 1.0 };
            out[0] = theta * k * x[0];
            out[1] = -c * x[1];
            out[2] = theta * k * x[1];
            out[3] = c * x[0];
        },
    )?
    .with_info(info))
}

/// Baxendale's `λ(σ)` and `α(σ)`.
pub fn baxendale_constants(a: f64, b: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let lambda = (b - a + ((b - a).powi(2) + s4).sqrt()) / s2;
    let alpha = s2 - (a + b) - ((a - b).powi(2) + s4).sqrt();
    (lambda, alpha)
}

pub fn baxendale_valid(a: f64, b: f64, sigma: f64) -> Result<()> {
    require(a * b < 0.0, "a,b", "Baxendale requires ab < 0")?;
    require(a + b < 0.0, "a,b", "Baxendale requires a + b < 0")?;
    let bound = (2.0 * a * b / (a + b)).sqrt();
    if !(sigma > bound) {
        return Err(Error::param(
            "sigma",
            format!("Baxendale requires sigma > sqrt(2ab/(a+b)) = {bound}"),
        ));
    }
    Ok(())
}

/// Baxendale's linear system driven by one scalar Brownian motion.
pub fn make_baxendale(a: f64, b: f64, sigma: f64, theta_x: f64, theta_y: f64) -> Result<Model> {
    baxendale_valid(a, b, sigma)?;
    let (lambda, alpha) = baxendale_constants(a, b, sigma);
    let s2 = sigma * sigma;
    let (ax, by) = (a - 0.5 * s2, b - 0.5 * s2);
    let closed: PairField = Arc::new(move |p, r| {
        let (u, v) = (p[0] - r[0], p[1] - r[1]);
        let n = u * u + lambda * v * v;
        -0.5 * alpha - (lambda - 1.0).powi(2) * s2 * u * u * v * v / (n * n)
    });
    let info = ModelInfo {
        params: params(&[
            ("a", a),
            ("b", b),
            ("sigma", sigma),
            ("theta_x", theta_x),
            ("theta_y", theta_y),
        ]),
        derived: params(&[("lambda", lambda), ("alpha", alpha)]),
        nils: Some(ClosedFormNils {
            s: Matrix::diag(&[1.0, lambda]),
            lambda: closed,
        }),
        ..Default::default()
    };
    Ok(Model::new(
        "baxendale",
        2,
        1,
        move |x, out| {
            out[0] = ax * x[0];
            out[1] = by * x[1];
        },
        move |x, out| {
            out[0] = theta_x - sigma * x[1];
            out[1] = sigma * x[0] + theta_y;
        },
    )?
    .with_jacobian(move |_, out| {
        out.copy_from_slice(&[ax, 0.0, 0.0, by]);
    })
    .with_sigma_gradient(move |_, out| {
        out.copy_from_slice(&[0.0, -sigma, sigma, 0.0]);
    })
    .with_info(info))
}

/// Model with rank-one state-dependent noise `σ(x) = x λ(x)ᵀ + σ⁰`.
pub fn make_rank_one_noise(
    drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    lambda: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    sigma0: Matrix,
) -> Result<Model> {
    let d = sigma0.rows();
    if !sigma0.is_square() {
        return Err(Error::Dimension("sigma0 must be square".into()));
    }
    Model::new("rank_one_noise", d, d, drift, move |x, out| {
        let mut l = vec![0.0; d];
        lambda(x, &mut l);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = x[i] * l[j] + sigma0[(i, j)];
            }
        }
    })
}

/// `make_rank_one_noise` with linear drift `-a x`, constant `λ` and `σ⁰ = s I`.
pub fn make_rank_one_linear(a: f64, lambda: Vec<f64>, s: f64) -> Result<Model> {
    let d = lambda.len();
    require(d >= 1, "lambda", "needs at least one component")?;
    require(lambda.iter().all(|v| v.is_finite()), "lambda", "must be finite")?;
    let l = lambda.clone();
    let mut info = ModelInfo {
        params: params(&[("a", a), ("s", s), ("d", d as f64)]),
        ..Default::default()
    };
    for (i, v) in lambda.iter().enumerate() {
        info.params.insert(format!("lambda_{i}"), *v);
    }
    let lg = lambda.clone();
    Ok(make_rank_one_noise(
        move |x, out| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = -a * v;
            }
        },
        move |_, out| out.copy_from_slice(&l),
        Matrix::scalar(d, s),
    )?
    .with_jacobian(move |_, out| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = -a;
        }
    })
    .with_sigma_gradient(move |_, out| {
        out.fill(0.0);
        for i in 0..d {
            for (l, lv) in lg.iter().enumerate() {
                out[(i * d + l) * d + i] = *lv;
            }
        }
    })
    .with_info(info))
}

/// One-dimensional gradient diffusion `dX = -U'(X) dt + σ dW`.
pub fn make_kolmogorov_1d(
    u_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    u_second: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    sigma: f64,
) -> Result<Model> {
    require(sigma > 0.0 && sigma.is_finite(), "sigma", "must be positive")?;
    let mut m = Model::new(
        "kolmogorov_1d",
        1,
        1,
        move |x, out| out[0] = -u_prime(x[0]),
        move |_, out| out[0] = sigma,
    )?
    .with_sigma_gradient(|_, out| out[0] = 0.0);
    if let Some(u2) = u_second {
        m = m.with_jacobian(move |x, out| out[0] = -u2(x[0]));
    }
    Ok(m)
}

/// Kolmogorov model with polynomial potential `U(x) = a1 x²/2 + a3 x⁴/4`.
pub fn make_kolmogorov_poly(a1: f64, a3: f64, sigma: f64) -> Result<Model> {
    require(a3 > 0.0 || (a3 == 0.0 && a1 > 0.0), "a3", "potential must be confining")?;
    let s2 = sigma * sigma;
    let mut m = make_kolmogorov_1d(
        move |x| a1 * x + a3 * x * x * x,
        Some(Arc::new(move |x| a1 + 3.0 * a3 * x * x)),
        sigma,
    )?;
    m.info = ModelInfo {
        params: params(&[("a1", a1), ("a3", a3), ("sigma", sigma)]),
        log_density: Some(Arc::new(move |x: &[f64]| {
            let x2 = x[0] * x[0];
            -2.0 * (0.5 * a1 * x2 + 0.25 * a3 * x2 * x2) / s2
        })),
        ..Default::default()
    };
    Ok(m)
}

/// Driftless diffusion `dX = σ(X) dW`.
pub fn make_martingale_1d(
    sigma_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<Model> {
    Model::new(
        "martingale_1d",
        1,
        1,
        |_, out| out[0] = 0.0,
        move |x, out| out[0] = sigma_fn(x[0]),
    )
    .map(|m| m.with_jacobian(|_, out| out[0] = 0.0))
}

/// Martingale model with `σ(x) = sqrt(s0² + s1² x²)`, invariant density
/// proportional to `1/σ²`.
pub fn make_martingale_hyperbolic(s0: f64, s1: f64) -> Result<Model> {
    require(s0 > 0.0, "s0", "must be positive")?;
    require(s1 > 0.0, "s1", "must be positive so that 1/sigma is square integrable")?;
    let mut m = make_martingale_1d(move |x| (s0 * s0 + s1 * s1 * x * x).sqrt())?
        .with_sigma_gradient(move |x, out| {
            out[0] = s1 * s1 * x[0] / (s0 * s0 + s1 * s1 * x[0] * x[0]).sqrt()
        });
    m.info = ModelInfo {
        params: params(&[("s0", s0), ("s1", s1)]),
        log_density: Some(Arc::new(move |x: &[f64]| {
            -(s0 * s0 + s1 * s1 * x[0] * x[0]).ln()
        })),
        ..Default::default()
    };
    Ok(m)
}

/// A named builtin with its parameter defaults.
pub struct Builtin {
    pub name: &'static str,
    pub defaults: &'static [(&'static str, f64)],
    pub build: fn(&Params) -> Result<Model>,
}

fn get(p: &Params, key: &str) -> f64 {
    p[key]
}

fn get_dim(p: &Params, key: &str) -> Result<usize> {
    let v = p[key];
    if v < 1.0 || v.fract() != 0.0 || v > 64.0 {
        return Err(Error::param(key, "must be an integer in [1, 64]"));
    }
    Ok(v as usize)
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "ou",
        defaults: &[("sigma", 1.0)],
        build: |p| make_ou(get(p, "sigma")),
    },
    Builtin {
        name: "double_well",
        defaults: &[("sigma", 1.0), ("d", 2.0)],
        build: |p| make_double_well(get(p, "sigma"), get_dim(p, "d")?),
    },
    Builtin {
        name: "polar_counterexample",
        defaults: &[("theta", 1.0), ("c", 1.0)],
        build: |p| make_polar_counterexample(get(p, "theta"), get(p, "c")),
    },
    Builtin {
        name: "baxendale",
        defaults: &[
            ("a", 1.0),
            ("b", -2.0),
            ("sigma", 3.0),
            ("theta_x", 0.0),
            ("theta_y", 0.0),
        ],
        build: |p| {
            make_baxendale(
                get(p, "a"),
                get(p, "b"),
                get(p, "sigma"),
                get(p, "theta_x"),
                get(p, "theta_y"),
            )
        },
    },
    Builtin {
        name: "rank_one_noise",
        defaults: &[("d", 2.0), ("a", 1.0), ("s", 1.0)],
        build: |p| {
            let d = get_dim(p, "d")?;
            let lambda = (0..d)
                .map(|i| p.get(&format!("lambda_{i}")).copied().unwrap_or(0.0))
                .collect();
            make_rank_one_linear(get(p, "a"), lambda, get(p, "s"))
        },
    },
    Builtin {
        name: "kolmogorov_1d",
        defaults: &[("a1", 0.0), ("a3", 1.0), ("sigma", 1.0)],
        build: |p| make_kolmogorov_poly(get(p, "a1"), get(p, "a3"), get(p, "sigma")),
    },
    Builtin {
        name: "martingale_1d",
        defaults: &[("s0", 1.0), ("s1", 1.0)],
        build: |p| make_martingale_hyperbolic(get(p, "s0"), get(p, "s1")),
    },
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|b| b.name).collect()
}

/// Build a builtin by name. Missing parameters take their defaults; unknown
/// parameters are rejected.
pub fn build_builtin(name: &str, overrides: &Params) -> Result<Model> {
    let entry = BUILTINS.iter().find(|b| b.name == name).ok_or_else(|| {
        Error::param(
            "model",
            format!("unknown model `{name}` (known: {})", builtin_names().join(", ")),
        )
    })?;
    let mut p: Params = entry.defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in overrides {
        let known = p.contains_key(k)
            || (entry.name == "rank_one_noise" && k.starts_with("lambda_"));
        if !known {
            return Err(Error::param(k, format!("not a parameter of model `{name}`")));
        }
        p.insert(k.clone(), *v);
    }
    (entry.build)(&p)
}
