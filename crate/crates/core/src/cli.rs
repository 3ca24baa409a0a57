//! Command-line surface: TOML run configs with flag overrides, subcommand
//! dispatch and the files each run leaves behind.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::confluence::criteria::{compact_set_criterion, directional_ellipticity};
use crate::confluence::diagonal::{necessary_condition, smooth_criterion_sup, usc_diagonal};
use crate::confluence::hormander::hormander_analysis;
use crate::confluence::nils::nils_or_closed_form;
use crate::confluence::{check_theta_conditions, scale_speed_1d, MetricS, ThetaFunction};
use crate::empirical::WeightedEmpiricalMeasure;
use crate::engine::{sample_invariant, Stepper};
use crate::harness::clt::{rung_rows, run_clt_study, CltConfig, GradientField, Mode};
use crate::harness::counterexample::{polar_diagnostics, PolarRun};
use crate::harness::poisson::{bias_constants, poisson_solve_labeled, PoissonData, Target};
use crate::linalg::Matrix;
use crate::model::{build_builtin, Model, ScalarField, BUILTINS};
use crate::schedule::{make_correlation, NoiseKind, NoiseStream, StepSchedule, WeightScheme};
use crate::transport::weak_confluence_transport_test;
use crate::{Error, Result};

/// Environment variable overriding the output directory of the config file.
pub const OUT_ENV: &str = "TWOPOINT_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    /// Decreasing-step Euler path and empirical-measure moments.
    Simulate,
    /// Battery of confluence criteria.
    Confluence,
    /// CSV grid of the NILS exponent along the first coordinate.
    NilsMap,
    /// Discrete Kantorovich test with a dual certificate.
    TransportCheck,
    /// Replicated CLT study, crude or Richardson-Romberg.
    RrClt,
    /// Polar counterexample traces.
    Counterexample,
    /// One-dimensional Poisson solve and bias constants.
    #[value(name = "poisson-1d")]
    #[serde(rename = "poisson-1d")]
    Poisson1d,
}

/// A matrix given as a multiple of the identity or in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn resolve(&self, n: usize) -> Result<Matrix> {
        match self {
            MatrixSpec::Scalar(s) => Ok(Matrix::identity(n).scaled(*s)),
            MatrixSpec::Full(rows) => {
                let m = Matrix::from_rows(rows)?;
                if m.rows() != n || m.cols() != n {
                    return Err(Error::Dimension(format!("expected a {n} x {n} matrix")));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub model: String,
    /// Model parameters, defaults filled in.
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
    pub out: PathBuf,

    pub c: f64,
    pub mu: f64,
    pub weights: WeightScheme,
    pub noise: NoiseKind,
    pub rho: MatrixSpec,
    pub s: MatrixSpec,
    /// `θ` selector: a constant such as `"1"`, or `"log:<kappa>:<eps0>"`.
    pub theta: String,
    pub x0: Vec<f64>,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,

    pub steps: u64,
    pub record_every: u64,

    pub dt: f64,
    pub horizon: f64,
    pub window_start: f64,
    pub delta_phi: Vec<f64>,

    pub grid: usize,
    pub criterion_grid: usize,
    pub bracket_length: usize,
    pub budget: usize,
    pub eps0: f64,
    pub delta: f64,

    pub samples: usize,
    pub sample_step: f64,
    pub sample_burn: u64,
    pub sample_thin: u64,
    pub n_atoms: usize,

    /// Test function selector: `"x"` or `"x^k"` (first coordinate).
    pub f: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_f: Option<f64>,
    pub mode: Mode,
    pub n_ladder: Vec<u64>,
    pub replications: usize,
    pub bias: bool,

    pub range: [f64; 2],
    pub poisson_grid: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: Subcommand::Simulate,
            model: String::new(),
            params: BTreeMap::new(),
            seed: 0,
            threads: 0,
            out: PathBuf::from("out"),
            c: 1.0,
            mu: 0.5,
            weights: WeightScheme::Step,
            noise: NoiseKind::Gaussian,
            rho: MatrixSpec::Scalar(1.0),
            s: MatrixSpec::Scalar(1.0),
            theta: "1".into(),
            x0: vec![],
            bounds: vec![],
            steps: 100_000,
            record_every: 100,
            dt: 1e-3,
            horizon: 100.0,
            window_start: 50.0,
            delta_phi: vec![0.5 * PI, PI],
            grid: 41,
            criterion_grid: 11,
            bracket_length: 2,
            budget: 2000,
            eps0: 0.1,
            delta: 0.1,
            samples: 2000,
            sample_step: 0.01,
            sample_burn: 10_000,
            sample_thin: 20,
            n_atoms: 100,
            f: "x".into(),
            nu_f: None,
            mode: Mode::Crude,
            n_ladder: vec![1000, 10_000, 100_000],
            replications: 100,
            bias: true,
            range: [-6.0, 6.0],
            poisson_grid: 200,
        }
    }
}

fn config_err(line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

/// 1-based line on which `key` is assigned, if any.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .or_else(|| t.strip_prefix(&format!("\"{key}\"")))
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn field_names() -> Vec<String> {
    let mut names: Vec<String> = match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("RunConfig serializes to an object"),
    };
    names.push("nu_f".into());
    names
}

/// Parse a value given on the command line: TOML syntax, or a bare string.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| config_err(None, format!("override `{raw}` is not of the form key=value")))?;
    let key = k.trim().to_string();
    let v = v.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((key, value))
}

fn read_table(text: &str) -> Result<toml::Table> {
    let t = text.trim_start();
    if t.starts_with('{') {
        // A manifest written by a previous run.
        let mut v: Value = serde_json::from_str(text).map_err(|e| config_err(Some(e.line()), e.to_string()))?;
        if let Some(inner) = v.get_mut("config") {
            v = inner.take();
        }
        return toml::Table::deserialize(v).map_err(|e| config_err(None, e.to_string()));
    }
    toml::from_str::<toml::Table>(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        config_err(line, e.message().to_string())
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// Parse a config document (TOML, or a JSON manifest) and apply overrides,
/// which win over the document. Every field is validated before returning.
pub fn parse_config_with(text: &str, overrides: &[(String, toml::Value)]) -> Result<RunConfig> {
    let mut table = read_table(text)?;
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    let sub = table
        .get("subcommand")
        .ok_or_else(|| config_err(None, "missing `subcommand`"))?
        .clone();
    let sub = Subcommand::deserialize(sub)
        .map_err(|e| config_err(line_of_key(text, "subcommand"), format!("subcommand: {e}")))?;
    let model = match table.get("model") {
        Some(toml::Value::String(s)) if !s.is_empty() => s.clone(),
        Some(toml::Value::String(_)) | None => default_model(sub).to_string(),
        Some(_) => return Err(config_err(line_of_key(text, "model"), "`model` must be a string")),
    };
    table.insert("model".into(), toml::Value::String(model.clone()));
    let entry = BUILTINS.iter().find(|b| b.name == model).ok_or_else(|| {
        config_err(
            line_of_key(text, "model"),
            format!("unknown model `{model}` (known: {})", crate::model::builtin_names().join(", ")),
        )
    })?;

    // Model parameters may sit at top level or in a [params] table.
    let fields = field_names();
    let mut params: BTreeMap<String, f64> = entry.defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let mut given = toml::Table::new();
    if let Some(p) = table.remove("params") {
        match p {
            toml::Value::Table(t) => given.extend(t),
            _ => return Err(config_err(line_of_key(text, "params"), "`params` must be a table")),
        }
    }
    let stray: Vec<String> = table.keys().filter(|k| !fields.contains(k)).cloned().collect();
    for k in stray {
        let v = table.remove(&k).unwrap();
        given.insert(k, v);
    }
    for (k, v) in given {
        let is_param = params.contains_key(&k) || (model == "rank_one_noise" && k.starts_with("lambda_"));
        if !is_param {
            return Err(config_err(line_of_key(text, &k), format!("unknown key `{k}`")));
        }
        let x = match v {
            toml::Value::Float(f) => f,
            toml::Value::Integer(i) => i as f64,
            _ => return Err(config_err(line_of_key(text, &k), format!("parameter `{k}` must be a number"))),
        };
        params.insert(k, x);
    }

    // Per-key deserialization first, so a type error points at its line.
    for (k, v) in &table {
        let mut one = toml::Table::new();
        one.insert(k.clone(), v.clone());
        if let Err(e) = RunConfig::deserialize(toml::Value::Table(one)) {
            return Err(config_err(line_of_key(text, k), format!("`{k}`: {e}")));
        }
    }
    let mut cfg = RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| config_err(None, e.to_string()))?;
    cfg.params = params;
    resolve(&mut cfg, text)?;
    Ok(cfg)
}

fn default_model(sub: Subcommand) -> &'static str {
    match sub {
        Subcommand::Counterexample => "polar_counterexample",
        Subcommand::Confluence | Subcommand::NilsMap | Subcommand::TransportCheck => "double_well",
        _ => "ou",
    }
}

fn check(ok: bool, text: &str, key: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(line_of_key(text, key), format!("`{key}` {reason}")))
    }
}

fn resolve(cfg: &mut RunConfig, text: &str) -> Result<()> {
    let model = build_builtin(&cfg.model, &cfg.params)
        .map_err(|e| config_err(line_of_key(text, "model"), format!("model `{}`: {e}", cfg.model)))?;
    let (d, q) = (model.d(), model.q());
    if cfg.x0.is_empty() {
        cfg.x0 = vec![0.0; d];
        if cfg.subcommand == Subcommand::Counterexample {
            cfg.x0[0] = 1.0;
        }
    }
    check(cfg.x0.len() == d, text, "x0", &format!("must have length {d}"))?;
    if cfg.bounds.is_empty() {
        cfg.bounds = vec![[-2.0, 2.0]; d];
    }
    check(
        cfg.bounds.len() == d && cfg.bounds.iter().all(|b| b[0] < b[1] && b[0].is_finite() && b[1].is_finite()),
        text,
        "box",
        &format!("must list {d} finite intervals [lo, hi] with lo < hi"),
    )?;
    if cfg.threads == 0 {
        cfg.threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    }
    StepSchedule::new(cfg.c, cfg.mu).map_err(|e| match e {
        Error::Parameter { name, reason } => config_err(line_of_key(text, &name), format!("`{name}` {reason}")),
        other => other,
    })?;
    let rho = cfg.rho.resolve(q).map_err(|e| config_err(line_of_key(text, "rho"), e.to_string()))?;
    make_correlation(rho).map_err(|e| config_err(line_of_key(text, "rho"), e.to_string()))?;
    let s = cfg.s.resolve(d).map_err(|e| config_err(line_of_key(text, "s"), e.to_string()))?;
    MetricS::new(s).map_err(|e| config_err(line_of_key(text, "s"), e.to_string()))?;
    parse_theta(&cfg.theta).map_err(|e| config_err(line_of_key(text, "theta"), e.to_string()))?;
    parse_target(&cfg.f).map_err(|e| config_err(line_of_key(text, "f"), e.to_string()))?;
    check(cfg.record_every > 0, text, "record_every", "must be positive")?;
    check(cfg.steps > 0, text, "steps", "must be positive")?;
    check(cfg.dt > 0.0 && cfg.dt <= cfg.horizon, text, "dt", "must satisfy 0 < dt <= horizon")?;
    check(
        cfg.window_start >= 0.0 && cfg.window_start < cfg.horizon,
        text,
        "window_start",
        "must lie in [0, horizon)",
    )?;
    check(cfg.grid >= 2, text, "grid", "must be at least 2")?;
    check(cfg.criterion_grid >= 1, text, "criterion_grid", "must be positive")?;
    check((1..=3).contains(&cfg.bracket_length), text, "bracket_length", "must be 1, 2 or 3")?;
    check(cfg.budget > 0, text, "budget", "must be positive")?;
    check(cfg.eps0 > 0.0, text, "eps0", "must be positive")?;
    check(cfg.delta > 0.0, text, "delta", "must be positive")?;
    check(cfg.samples > 0, text, "samples", "must be positive")?;
    check(cfg.sample_step > 0.0, text, "sample_step", "must be positive")?;
    check(cfg.sample_thin > 0, text, "sample_thin", "must be positive")?;
    check(
        cfg.n_atoms > 0 && cfg.n_atoms <= crate::transport::MAX_ATOMS && cfg.n_atoms <= cfg.samples,
        text,
        "n_atoms",
        "must lie in 1..=min(samples, 500)",
    )?;
    check(
        !cfg.n_ladder.is_empty() && cfg.n_ladder[0] > 0 && cfg.n_ladder.windows(2).all(|w| w[0] < w[1]),
        text,
        "n_ladder",
        "must be a strictly increasing list of positive step counts",
    )?;
    check(cfg.replications >= 2, text, "replications", "must be at least 2")?;
    check(cfg.range[0] < cfg.range[1], text, "range", "must satisfy lo < hi")?;
    check(cfg.poisson_grid >= 4, text, "poisson_grid", "must be at least 4")?;
    Ok(())
}

pub fn parse_theta(sel: &str) -> Result<ThetaFunction> {
    let sel = sel.trim();
    if let Some(rest) = sel.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let nums: Vec<f64> = parts.iter().filter_map(|p| p.trim().parse().ok()).collect();
        if parts.len() != 2 || nums.len() != 2 || !(nums[1] > 0.0 && nums[1] < 1.0) {
            return Err(Error::param("theta", "expected log:<kappa>:<eps0> with eps0 in (0, 1)"));
        }
        return Ok(ThetaFunction::log_corrected(nums[0], nums[1]));
    }
    let c: f64 = sel
        .parse()
        .map_err(|_| Error::param("theta", format!("`{sel}` is neither a constant nor log:<kappa>:<eps0>")))?;
    ThetaFunction::constant(c)
}

/// `"x"` or `"x^k"`, a power of the first coordinate.
pub fn parse_target(sel: &str) -> Result<u32> {
    let sel = sel.trim();
    let p = match sel {
        "x" => 1,
        _ => sel
            .strip_prefix("x^")
            .and_then(|p| p.parse::<u32>().ok())
            .ok_or_else(|| Error::param("f", format!("`{sel}`: expected x or x^k")))?,
    };
    if !(1..=8).contains(&p) {
        return Err(Error::param("f", "power must lie in 1..=8"));
    }
    Ok(p)
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    seed: u64,
    /// Square root used for `T` in `Z^(ρ) = ρᵀZ + T Z'`.
    noise_root: &'a str,
    config: &'a RunConfig,
}

pub fn manifest_json(cfg: &RunConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        noise_root: "symmetric",
        config: cfg,
    })?)
}

/// Float formatting for CSV output: 17 significant digits.
pub fn csv_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        Csv { text: header.join(",") + "\n" }
    }

    fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    fn floats(&mut self, xs: &[f64]) {
        self.row(&xs.iter().map(|x| csv_float(*x)).collect::<Vec<_>>());
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Write the manifest and the subcommand's outputs into `cfg.out`; returns
/// the files written.
pub fn dispatch(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = cfg.out.clone();
    fs::create_dir_all(&out)?;
    let model = build_builtin(&cfg.model, &cfg.params)?;
    let manifest = out.join("manifest.json");
    fs::write(&manifest, manifest_json(cfg)? + "\n")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
    let mut files = pool.install(|| match cfg.subcommand {
        Subcommand::Simulate => cmd_simulate(cfg, &model, &out),
        Subcommand::Confluence => cmd_confluence(cfg, &model, &out),
        Subcommand::NilsMap => cmd_nils_map(cfg, &model, &out),
        Subcommand::TransportCheck => cmd_transport(cfg, &model, &out),
        Subcommand::RrClt => cmd_rr_clt(cfg, &model, &out),
        Subcommand::Counterexample => cmd_counterexample(cfg, &model, &out),
        Subcommand::Poisson1d => cmd_poisson(cfg, &model, &out),
    })?;
    files.insert(0, manifest);
    Ok(files)
}

fn bounds(cfg: &RunConfig) -> Vec<(f64, f64)> {
    cfg.bounds.iter().map(|b| (b[0], b[1])).collect()
}

fn metric(cfg: &RunConfig, model: &Model) -> Result<MetricS> {
    MetricS::new(cfg.s.resolve(model.d())?)
}

fn nu_samples(cfg: &RunConfig, model: &Model) -> Result<Vec<Vec<f64>>> {
    let mut stream = NoiseStream::new(cfg.seed, u64::MAX, cfg.noise);
    sample_invariant(model, &cfg.x0, cfg.sample_step, cfg.sample_burn, cfg.sample_thin, cfg.samples, &mut stream)
}

fn attempt<T: Serialize>(r: Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).unwrap_or(Value::Null),
        Err(e) => json!({ "error": { "kind": e.kind(), "message": e.to_string() } }),
    }
}

fn cmd_simulate(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    let d = model.d();
    let mut sched = StepSchedule::new(cfg.c, cfg.mu)?;
    let mut nu = WeightedEmpiricalMeasure::new(d);
    for i in 0..d {
        nu.register(format!("x{i}"), move |x| x[i]);
        nu.register(format!("x{i}^2"), move |x| x[i] * x[i]);
    }
    let mut stepper = Stepper::new(model);
    let mut stream = NoiseStream::new(cfg.seed, 0, cfg.noise);
    let mut z = vec![0.0; model.q()];
    let mut x = cfg.x0.clone();
    let mut header = vec!["k".to_string(), "Gamma_k".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    let mut path = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let record = |k: u64, g: f64, x: &[f64], csv: &mut Csv| {
        let mut row = vec![k.to_string(), csv_float(g)];
        row.extend(x.iter().map(|v| csv_float(*v)));
        csv.row(&row);
    };
    record(0, 0.0, &x, &mut path);
    for k in 1..=cfg.steps {
        let g = sched.advance();
        nu.update(cfg.weights.weight(g), &x);
        stream.fill(&mut z);
        stepper.step(model, &mut x, g, &z, k)?;
        if k % cfg.record_every == 0 {
            record(k, sched.big_gamma(), &x, &mut path);
        }
    }
    let integrals: BTreeMap<String, f64> = nu.summary().integrals.into_iter().collect();
    let report = json!({
        "model": model.name(),
        "steps": cfg.steps,
        "big_gamma": sched.big_gamma(),
        "final": x,
        "integrals": integrals,
        "total_weight": nu.total_weight(),
    });
    let (p1, p2) = (out.join("report.json"), out.join("path.csv"));
    write_json(&p1, &report)?;
    path.write(&p2)?;
    Ok(vec![p1, p2])
}

fn cmd_confluence(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    let s = metric(cfg, model)?;
    let b = bounds(cfg);
    let theta = parse_theta(&cfg.theta)?;
    let radius = b.iter().fold(0.0f64, |m, (lo, hi)| m.max(lo.abs()).max(hi.abs()));
    let samples = nu_samples(cfg, model);
    let mut report = json!({
        "model": model.name(),
        "metric": s.matrix(),
        "box": cfg.bounds,
        "hormander": attempt(hormander_analysis(model, &cfg.x0, cfg.bracket_length)),
        "smooth_criterion": attempt(smooth_criterion_sup(model, &s, &b, cfg.criterion_grid)),
        "compact_set": attempt(compact_set_criterion(model, &s, radius, cfg.delta, cfg.budget, cfg.criterion_grid, cfg.seed)),
        "ellipticity": attempt(directional_ellipticity(model, &s, cfg.eps0, cfg.budget, &b, cfg.seed)),
        "necessary_condition": attempt(samples.and_then(|xs| necessary_condition(model, &s, &xs))),
        "theta": attempt(check_theta_conditions(&theta, true)),
        "assumptions": { "weak_compactness_of_invariant_set": "assumed, not checked" },
    });
    if model.d() == 1 {
        report["scale_speed"] = attempt(scale_speed_1d(model, cfg.x0[0], (cfg.range[0], cfg.range[1])).map(|t| {
            json!({
                "mass": t.mass,
                "mass_finite": t.mass_finite,
                "p_to_plus_infinity": t.p_to_plus_infinity,
                "p_to_minus_infinity": t.p_to_minus_infinity,
            })
        }));
    }
    let p = out.join("report.json");
    write_json(&p, &report)?;
    Ok(vec![p])
}

fn cmd_nils_map(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    let s = metric(cfg, model)?;
    let [lo, hi] = cfg.bounds[0];
    let n = cfg.grid;
    let axis: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let point = |u: f64| {
        let mut p = cfg.x0.clone();
        p[0] = u;
        p
    };
    let rows: Vec<[f64; 3]> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (u, v) = (axis[k / n], axis[k % n]);
            let (x, y) = (point(u), point(v));
            let val = if s.is_near_diagonal(&x, &y) {
                usc_diagonal(model, &s, &x)?.value
            } else {
                nils_or_closed_form(model, &s, &x, &y)?
            };
            Ok([u, v, val])
        })
        .collect::<Result<_>>()?;
    let mut csv = Csv::new(&["x", "y", "nils"]);
    for r in &rows {
        csv.floats(r);
    }
    let vals = rows.iter().map(|r| r[2]);
    let report = json!({
        "model": model.name(),
        "grid": n,
        "axis": [lo, hi],
        "anchor": cfg.x0,
        "min": vals.clone().fold(f64::INFINITY, f64::min),
        "max": vals.fold(f64::NEG_INFINITY, f64::max),
        "diagonal": "upper semicontinuous envelope of the diagonal value",
    });
    let (p1, p2) = (out.join("report.json"), out.join("nils_map.csv"));
    write_json(&p1, &report)?;
    csv.write(&p2)?;
    Ok(vec![p1, p2])
}

fn cmd_transport(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    let s = metric(cfg, model)?;
    let xs = nu_samples(cfg, model)?;
    let report = weak_confluence_transport_test(model, &s, &xs, cfg.n_atoms, cfg.seed)?;
    let mut csv = Csv::new(&["atom", "phi"]);
    for (i, p) in report.phi.iter().enumerate() {
        csv.row(&[i.to_string(), csv_float(*p)]);
    }
    let mut cp = Csv::new(&["i", "j", "mass"]);
    for (i, j, m) in report.coupling.sparse() {
        cp.row(&[i.to_string(), j.to_string(), csv_float(m)]);
    }
    let (p1, p2, p3) = (out.join("report.json"), out.join("dual.csv"), out.join("coupling.csv"));
    write_json(&p1, &report)?;
    csv.write(&p2)?;
    cp.write(&p3)?;
    Ok(vec![p1, p2, p3])
}

fn power_target(p: u32) -> Target {
    Arc::new(move |x: f64| x.powi(p as i32))
}

/// Poisson data for a power target on a one-dimensional model.
fn solve_target(cfg: &RunConfig, model: &Model) -> Result<PoissonData> {
    let p = parse_target(&cfg.f)?;
    poisson_solve_labeled(model, power_target(p), &cfg.f, (cfg.range[0], cfg.range[1]), cfg.poisson_grid)
}

fn cmd_rr_clt(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    let p = parse_target(&cfg.f)?;
    let f: ScalarField = Arc::new(move |x: &[f64]| x[0].powi(p as i32));
    let mut warnings = Vec::new();
    let poisson = if model.d() == 1 && model.q() == 1 {
        match solve_target(cfg, model) {
            Ok(pd) => Some(pd),
            Err(e) => {
                warnings.push(format!("no Poisson solution, variance not predicted: {e}"));
                None
            }
        }
    } else {
        None
    };
    let nu_f = match (cfg.nu_f, &poisson) {
        (Some(v), _) => v,
        (None, Some(pd)) => pd.nu_f,
        (None, None) => return Err(Error::Precondition("set `nu_f`: no one-dimensional Poisson solution available".into())),
    };
    let mut study = CltConfig::new(model.clone(), f, nu_f);
    study.f_label = cfg.f.clone();
    study.mu = cfg.mu;
    study.c = cfg.c;
    study.n_ladder = cfg.n_ladder.clone();
    study.replications = cfg.replications;
    study.rho = make_correlation(cfg.rho.resolve(model.q())?)?;
    study.mode = cfg.mode;
    study.seed = cfg.seed;
    study.x0 = cfg.x0.clone();
    study.weights = cfg.weights;
    study.noise = cfg.noise;
    study.threads = Some(cfg.threads);
    if let Some(pd) = &poisson {
        let pd = pd.clone();
        let m = model.clone();
        let (lo, hi) = pd.range;
        let grad: GradientField = Arc::new(move |x: &[f64]| {
            let t = x[0].clamp(lo, hi);
            let gp = pd.derivative(t, 1).unwrap_or(f64::NAN);
            vec![m.diffusion(x)[(0, 0)] * gp]
        });
        study.sigma_grad_g = Some(grad);
    }
    let mut report = run_clt_study(&study)?;
    if cfg.bias {
        if let Some(pd) = &poisson {
            match bias_constants(model, pd, cfg.poisson_grid) {
                Ok(bc) => {
                    report.m_g1 = Some(bc.m_g1);
                    report.m_g2 = Some(bc.m_g2);
                }
                Err(e) => warnings.push(format!("bias constants unavailable: {e}")),
            }
        }
    }
    report.warnings.extend(warnings);
    let mut csv = Csv::new(&["n", "Gamma_n", "Gamma_n_r", "mean_err", "var_norm_err", "slope"]);
    for r in rung_rows(&report) {
        let mut row = vec![(r[0] as u64).to_string()];
        row.extend(r[1..].iter().map(|v| csv_float(*v)));
        csv.row(&row);
    }
    let (p1, p2) = (out.join("report.json"), out.join("rungs.csv"));
    write_json(&p1, &report)?;
    csv.write(&p2)?;
    Ok(vec![p1, p2])
}

fn cmd_counterexample(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    if model.d() != 2 {
        return Err(Error::Precondition("counterexample diagnostics need a planar model".into()));
    }
    let rho = make_correlation(cfg.rho.resolve(model.q())?)?;
    let r0 = cfg.x0[0].hypot(cfg.x0[1]);
    if r0 <= 0.0 {
        return Err(Error::param("x0", "must not be the origin"));
    }
    let mut rt = Csv::new(&["delta_phi", "t", "r1", "r2"]);
    let mut gt = Csv::new(&["delta_phi", "t", "gap"]);
    let mut diags = Vec::new();
    for (i, &dphi) in cfg.delta_phi.iter().enumerate() {
        let run = PolarRun {
            dt: cfg.dt,
            horizon: cfg.horizon,
            window_start: cfg.window_start,
            record_every: cfg.record_every,
            seed: cfg.seed,
            replication: i as u64,
        };
        let (d, trace) = polar_diagnostics(model, r0, dphi, &rho, &run)?;
        for p in &trace {
            rt.floats(&[dphi, p.t, p.r1, p.r2]);
            gt.floats(&[dphi, p.t, p.gap]);
        }
        diags.push(d);
    }
    let report = json!({ "model": model.name(), "runs": diags });
    let (p1, p2, p3) = (out.join("report.json"), out.join("r_trace.csv"), out.join("gap_trace.csv"));
    write_json(&p1, &report)?;
    rt.write(&p2)?;
    gt.write(&p3)?;
    Ok(vec![p1, p2, p3])
}

fn cmd_poisson(cfg: &RunConfig, model: &Model, out: &Path) -> Result<Vec<PathBuf>> {
    let pd = solve_target(cfg, model)?;
    let bias = if cfg.bias { attempt(bias_constants(model, &pd, cfg.poisson_grid)) } else { Value::Null };
    let mut csv = Csv::new(&["x", "f", "g", "g_prime", "g_second", "residual"]);
    for &(x, res) in &pd.residual_profile {
        csv.floats(&[x, pd.f(x), pd.derivative(x, 0)?, pd.derivative(x, 1)?, pd.derivative(x, 2)?, res]);
    }
    let report = json!({ "poisson": pd.summary(), "bias_constants": bias });
    let (p1, p2) = (out.join("report.json"), out.join("solution.csv"));
    write_json(&p1, &report)?;
    csv.write(&p2)?;
    Ok(vec![p1, p2])
}

#[derive(Parser, Debug)]
#[command(name = "twopoint", version, about = "Simulation and confluence diagnostics for ergodic diffusions")]
pub struct Cli {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set mu=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed; replication r draws from substream (seed, r)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (wins over the config and the environment).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// Resolve a config from parsed flags: file, then `--set`, then the
/// environment's output directory, then the dedicated flags.
pub fn config_from_cli(cli: &Cli, env_out: Option<PathBuf>) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| config_err(None, format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let sub = serde_json::to_value(cli.subcommand)?;
    let mut overrides = vec![("subcommand".to_string(), toml::Value::String(sub.as_str().unwrap().to_string()))];
    for s in &cli.set {
        overrides.push(parse_override(s)?);
    }
    let out = cli.out.clone().or(env_out);
    if let Some(o) = out {
        overrides.push(("out".into(), toml::Value::String(o.to_string_lossy().into_owned())));
    }
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| config_err(None, "seed must fit in 63 bits"))?;
        overrides.push(("seed".into(), toml::Value::Integer(seed)));
    }
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), toml::Value::Integer(t as i64)));
    }
    parse_config_with(&text, &overrides)
}

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprint!("{e}");
            println!("{}", error_json("usage", e.to_string().trim()));
            return EXIT_USAGE;
        }
    };
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let cfg = match config_from_cli(&cli, env_out) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", error_json(e.kind(), &e.to_string()));
            return EXIT_USAGE;
        }
    };
    match dispatch(&cfg) {
        Ok(files) => {
            let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({ "status": "ok", "files": files }));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", error_json(e.kind(), &e.to_string()));
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("subcommand = \"nils-map\"\nmodel = \"double_well\"\nsigma = 1\nd = 2\n").unwrap();
        assert_eq!(c.subcommand, Subcommand::NilsMap);
        assert_eq!(c.params["d"], 2.0);
        assert_eq!(c.bounds, vec![[-2.0, 2.0]; 2]);
        assert_eq!(c.grid, 41);
        assert_eq!(c.x0, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_rho_expands() {
        assert_eq!(MatrixSpec::Scalar(0.5).resolve(2).unwrap(), Matrix::identity(2).scaled(0.5));
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_config("subcommand = \"rr-clt\"\nmu = 1.5\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(2), .. }), "{e}");
        let e = parse_config("subcommand = \"simulate\"\n\nbogus = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(3), .. }), "{e}");
        let e = parse_config("subcommand = \"simulate\"\nsteps = \"many\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(2), .. }), "{e}");
        let e = parse_config("subcommand = \"simulate\"\nsteps = [\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(_), .. }), "{e}");
    }

    #[test]
    fn manifest_round_trip() {
        let c = parse_config("subcommand = \"rr-clt\"\nmu = 0.2\nrho = [[0.5]]\nnu_f = 0.0\n").unwrap();
        let back = parse_config(&manifest_json(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn overrides_win() {
        let (k, v) = parse_override("mu=0.25").unwrap();
        let c = parse_config_with("subcommand = \"simulate\"\nmu = 0.5\n", &[(k, v)]).unwrap();
        assert_eq!(c.mu, 0.25);
        assert_eq!(parse_override("mode=rr").unwrap().1, toml::Value::String("rr".into()));
    }

    #[test]
    fn selectors() {
        assert_eq!(parse_target("x^2").unwrap(), 2);
        assert!(parse_target("y").is_err());
        assert!(parse_theta("log:1:0.5").is_ok());
        assert!(parse_theta("-1").is_err());
    }
}
