//! C ABI over the `twopoint` library.
//!
//! Every fallible entry point returns a [`TpStatus`]; on failure the message
//! is available from [`tp_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use twopoint::confluence::nils::nils;
use twopoint::confluence::MetricS;
use twopoint::harness::clt::{run_clt_study, CltConfig, Mode};
use twopoint::harness::poisson::{poisson_solve_1d, PoissonData};
use twopoint::model::{build_builtin, Params};
use twopoint::schedule::CorrelationSpec;
use twopoint::transport::{max_coupling_value, DiscreteMarginal};
use twopoint::{Error, Matrix, Model};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Solver = 5,
    Unavailable = 6,
    Panic = 7,
}

/// A simulation model built from the builtin registry.
pub struct TpModel(Model);

/// A one-dimensional Poisson solution `A g = f - ν(f)`.
pub struct TpPoisson(PoissonData);

/// Summary of a replicated estimator study at its single rung.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TpStudySummary {
    pub mean_err: f64,
    /// Empirical variance of the normalized error.
    pub var_norm_err: f64,
    pub var_norm_se: f64,
    /// NaN when no Poisson handle was supplied.
    pub predicted_variance: f64,
    pub used_replications: usize,
    pub diverged: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TpStatus {
    match e {
        Error::Parameter { .. } | Error::Config { .. } | Error::Precondition(_) | Error::Diagonal { .. } => {
            TpStatus::InvalidArgument
        }
        Error::Dimension(_) => TpStatus::Dimension,
        Error::Solver(_) | Error::DegenerateCoupling(_) => TpStatus::Solver,
        Error::Unavailable(_) => TpStatus::Unavailable,
        _ => TpStatus::Numerical,
    }
}

struct Fail(TpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TpStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            TpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TpStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TpStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const TpModel) -> Result<&'a Model, Fail> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Build a builtin model by name. `keys`/`values` hold `n_params` parameter
/// overrides; missing parameters take their defaults.
///
/// # Safety
/// `name` and each key must be NUL-terminated strings; `keys` and `values`
/// must hold `n_params` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_model_new(
    name: *const c_char,
    keys: *const *const c_char,
    values: *const f64,
    n_params: usize,
    out: *mut *mut TpModel,
) -> TpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let keys = slice(keys, n_params, "keys")?;
        let values = slice(values, n_params, "values")?;
        let mut params = Params::new();
        for (k, v) in keys.iter().zip(values) {
            params.insert(str_arg(*k, "key")?.to_string(), *v);
        }
        let m = build_builtin(name, &params)?;
        *out = Box::into_raw(Box::new(TpModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`tp_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tp_model_free(model: *mut TpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension `d` and noise dimension `q`.
///
/// # Safety
/// `model` must be a live handle; `d` and `q` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_model_dims(model: *const TpModel, d: *mut usize, q: *mut usize) -> TpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if d.is_null() || q.is_null() {
            return Err(null("d/q"));
        }
        *d = m.d();
        *q = m.q();
        Ok(())
    })
}

/// Drift `b(x)` into `out` (`d` entries).
///
/// # Safety
/// `x` and `out` must hold `d` entries.
#[no_mangle]
pub unsafe extern "C" fn tp_model_drift(model: *const TpModel, x: *const f64, out: *mut f64) -> TpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = slice(x, m.d(), "x")?;
        m.drift_into(x, slice_mut(out, m.d(), "out")?);
        Ok(())
    })
}

/// Diffusion `σ(x)` into `out`, row-major `d × q`.
///
/// # Safety
/// `x` must hold `d` entries and `out` `d * q`.
#[no_mangle]
pub unsafe extern "C" fn tp_model_diffusion(model: *const TpModel, x: *const f64, out: *mut f64) -> TpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = slice(x, m.d(), "x")?;
        m.diffusion_into(x, slice_mut(out, m.d() * m.q(), "out")?);
        Ok(())
    })
}

/// NILS exponent `Λ_S(x, y)`. `s` is a row-major `d × d` metric, or null for
/// the identity.
///
/// # Safety
/// `x`, `y` must hold `d` entries, `s` (if non-null) `d * d`.
#[no_mangle]
pub unsafe extern "C" fn tp_nils(
    model: *const TpModel,
    s: *const f64,
    x: *const f64,
    y: *const f64,
    out: *mut f64,
) -> TpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = m.d();
        let metric = if s.is_null() {
            MetricS::identity(d)
        } else {
            MetricS::new(Matrix::from_row_major(d, d, slice(s, d * d, "s")?.to_vec())?)?
        };
        let v = nils(m, &metric, slice(x, d, "x")?, slice(y, d, "y")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Solve the Poisson equation for `f(x) = x^power` on `[lo, hi]` for a
/// one-dimensional model.
///
/// # Safety
/// `model` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_poisson_new(
    model: *const TpModel,
    power: u32,
    lo: f64,
    hi: f64,
    grid: usize,
    out: *mut *mut TpPoisson,
) -> TpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = power as i32;
        let pd = poisson_solve_1d(m, Arc::new(move |x: f64| x.powi(p)), (lo, hi), grid)?;
        *out = Box::into_raw(Box::new(TpPoisson(pd)));
        Ok(())
    })
}

/// # Safety
/// `poisson` must come from [`tp_poisson_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tp_poisson_free(poisson: *mut TpPoisson) {
    if !poisson.is_null() {
        drop(Box::from_raw(poisson));
    }
}

/// `ν(f)` and the largest generator residual of the solution.
///
/// # Safety
/// `poisson` must be live; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_poisson_summary(poisson: *const TpPoisson, nu_f: *mut f64, max_residual: *mut f64) -> TpStatus {
    guard(|| {
        let p = &poisson.as_ref().ok_or_else(|| null("poisson"))?.0;
        *nu_f.as_mut().ok_or_else(|| null("nu_f"))? = p.nu_f;
        *max_residual.as_mut().ok_or_else(|| null("max_residual"))? = p.max_residual;
        Ok(())
    })
}

/// `g^{(k)}(x)`; `k = 0` is `g` itself.
///
/// # Safety
/// `poisson` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_poisson_derivative(poisson: *const TpPoisson, x: f64, k: usize, out: *mut f64) -> TpStatus {
    guard(|| {
        let p = &poisson.as_ref().ok_or_else(|| null("poisson"))?.0;
        *out.as_mut().ok_or_else(|| null("out"))? = p.derivative(x, k)?;
        Ok(())
    })
}

/// Replicated Richardson-Romberg study of `f(x) = x₀^power` at horizon `n`
/// with scalar correlation `rho`. `rr = 0` runs the crude scheme instead.
/// With a non-null `poisson` (one-dimensional models) the asymptotic
/// variance is predicted from `σ g'`.
///
/// # Safety
/// `model` must be live, `poisson` live or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_rr_study(
    model: *const TpModel,
    power: u32,
    nu_f: f64,
    rr: i32,
    mu: f64,
    n: u64,
    replications: usize,
    rho: f64,
    seed: u64,
    poisson: *const TpPoisson,
    out: *mut TpStudySummary,
) -> TpStatus {
    guard(|| {
        let m = model_ref(model)?.clone();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = m.d();
        let p = power as i32;
        let mut cfg = CltConfig::new(m.clone(), Arc::new(move |x: &[f64]| x[0].powi(p)), nu_f);
        cfg.mode = if rr != 0 { Mode::Rr } else { Mode::Crude };
        cfg.mu = mu;
        cfg.n_ladder = vec![n];
        cfg.replications = replications;
        cfg.rho = CorrelationSpec::scalar(d, rho)?;
        cfg.seed = seed;
        if let Some(pd) = poisson.as_ref() {
            if d != 1 {
                return Err(invalid("variance prediction needs a one-dimensional model"));
            }
            let pd = pd.0.clone();
            cfg.sigma_grad_g = Some(Arc::new(move |x: &[f64]| {
                let s = m.diffusion(x)[(0, 0)];
                vec![s * pd.derivative(x[0], 1).unwrap_or(f64::NAN)]
            }));
        }
        let r = run_clt_study(&cfg)?;
        let rung = r.rungs.first().ok_or_else(|| Fail(TpStatus::Numerical, "every replication diverged".into()))?;
        *out = TpStudySummary {
            mean_err: rung.mean_err,
            var_norm_err: rung.var_norm_err,
            var_norm_se: rung.var_norm_se,
            predicted_variance: r.predicted_variance.unwrap_or(f64::NAN),
            used_replications: r.used_replications,
            diverged: r.diverged,
        };
        Ok(())
    })
}

/// Maximal coupling value `sup_π Σ c_ij π_ij` over couplings of the discrete
/// measure with itself. `cost` is row-major `n × n`; `weights` may be null
/// for uniform weights.
///
/// # Safety
/// `cost` must hold `n * n` entries, `weights` (if non-null) `n`.
#[no_mangle]
pub unsafe extern "C" fn tp_max_coupling_value(cost: *const f64, weights: *const f64, n: usize, out: *mut f64) -> TpStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let c = Matrix::from_row_major(n, n, slice(cost, n * n, "cost")?.to_vec())?;
        let atoms: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let marginal = if weights.is_null() {
            DiscreteMarginal::uniform(atoms)?
        } else {
            DiscreteMarginal::new(atoms, slice(weights, n, "weights")?.to_vec())?
        };
        let (v, _) = max_coupling_value(&c, &marginal)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
