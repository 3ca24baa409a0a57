//! Online weighted empirical measures `ν_n^η = (1/H_n) Σ η_k δ_{X̄_{k-1}}`
//! and their two-point (coupling) analogues.

use std::sync::Arc;

use serde::Serialize;

use crate::confluence::MetricS;
use crate::linalg::KahanSum;
use crate::model::{PairField, ScalarField};
use crate::{Error, Result};

/// Highest coordinate moment tracked by default.
pub const MOMENT_ORDER: usize = 4;

/// Fixed-bin histogram of one coordinate.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Histogram {
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub weights: Vec<f64>,
    pub below: f64,
    pub above: f64,
}

impl Histogram {
    pub fn new(coord: usize, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::param("histogram", "needs lo < hi and at least one bin"));
        }
        Ok(Histogram {
            coord,
            lo,
            hi,
            weights: vec![0.0; bins],
            below: 0.0,
            above: 0.0,
        })
    }

    fn add(&mut self, v: f64, w: f64) {
        if v < self.lo {
            self.below += w;
        } else if v >= self.hi {
            self.above += w;
        } else {
            let n = self.weights.len();
            let k = (((v - self.lo) / (self.hi - self.lo)) * n as f64) as usize;
            self.weights[k.min(n - 1)] += w;
        }
    }

    /// Rows `(bin_left, bin_right, weight)`.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let n = self.weights.len();
        let h = (self.hi - self.lo) / n as f64;
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| (self.lo + k as f64 * h, self.lo + (k + 1) as f64 * h, *w))
            .collect()
    }

    fn same_layout(&self, other: &Histogram) -> bool {
        self.coord == other.coord
            && self.lo == other.lo
            && self.hi == other.hi
            && self.weights.len() == other.weights.len()
    }
}

/// `ν_n^η` accumulated online over points of `ℝ^d`.
#[derive(Clone)]
pub struct WeightedEmpiricalMeasure {
    d: usize,
    updates: u64,
    total: KahanSum,
    names: Vec<String>,
    fns: Vec<ScalarField>,
    sums: Vec<KahanSum>,
    /// `moments[i * MOMENT_ORDER + (p - 1)] = Σ η x_i^p`.
    moments: Vec<KahanSum>,
    histogram: Option<Histogram>,
}

/// Serializable snapshot of a measure.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureSummary {
    pub updates: u64,
    pub total_weight: f64,
    pub integrals: Vec<(String, f64)>,
    /// `moments[i][p-1]` is the normalized `p`-th moment of coordinate `i`.
    pub moments: Vec<Vec<f64>>,
    pub histogram: Option<Histogram>,
}

impl std::fmt::Debug for WeightedEmpiricalMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightedEmpiricalMeasure")
            .field("d", &self.d)
            .field("updates", &self.updates)
            .field("total", &self.total.value())
            .field("functions", &self.names)
            .finish()
    }
}

impl WeightedEmpiricalMeasure {
    pub fn new(d: usize) -> Self {
        WeightedEmpiricalMeasure {
            d,
            updates: 0,
            total: KahanSum::new(),
            names: Vec::new(),
            fns: Vec::new(),
            sums: Vec::new(),
            moments: vec![KahanSum::new(); d * MOMENT_ORDER],
            histogram: None,
        }
    }

    /// Register a test function and return its index. Registration must
    /// happen before the first update.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> usize {
        self.register_shared(name, Arc::new(f))
    }

    pub fn register_shared(&mut self, name: impl Into<String>, f: ScalarField) -> usize {
        assert_eq!(self.updates, 0, "test functions must be registered before updates");
        self.names.push(name.into());
        self.fns.push(f);
        self.sums.push(KahanSum::new());
        self.fns.len() - 1
    }

    pub fn with_histogram(mut self, h: Histogram) -> Self {
        self.histogram = Some(h);
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `H_n`.
    pub fn total_weight(&self) -> f64 {
        self.total.value()
    }

    #[inline]
    pub fn update(&mut self, weight: f64, point: &[f64]) {
        debug_assert!(weight > 0.0);
        self.updates += 1;
        self.total.add(weight);
        for (f, s) in self.fns.iter().zip(self.sums.iter_mut()) {
            s.add(weight * f(point));
        }
        for (i, &x) in point.iter().enumerate().take(self.d) {
            let mut p = weight;
            for k in 0..MOMENT_ORDER {
                p *= x;
                self.moments[i * MOMENT_ORDER + k].add(p);
            }
        }
        if let Some(h) = self.histogram.as_mut() {
            h.add(point[h.coord], weight);
        }
    }

    /// Normalized integral of registered function `idx`.
    pub fn integrate(&self, idx: usize) -> f64 {
        self.sums[idx].value() / self.total.value()
    }

    pub fn integrate_named(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.integrate(i))
    }

    /// Normalized mass; 1 once anything has been added.
    pub fn mass(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.total.value() / self.total.value()
        }
    }

    /// Normalized `p`-th moment of coordinate `i`, `1 ≤ p ≤ 4`.
    pub fn moment(&self, i: usize, p: usize) -> f64 {
        self.moments[i * MOMENT_ORDER + p - 1].value() / self.total.value()
    }

    pub fn histogram(&self) -> Option<&Histogram> {
        self.histogram.as_ref()
    }

    /// Combine with an accumulator over a disjoint index range.
    pub fn merge(&mut self, other: &WeightedEmpiricalMeasure) -> Result<()> {
        if self.d != other.d || self.names != other.names {
            return Err(Error::Dimension("merging measures with different layouts".into()));
        }
        match (&mut self.histogram, &other.histogram) {
            (None, None) => {}
            (Some(a), Some(b)) if a.same_layout(b) => {
                for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                    *x += y;
                }
                a.below += b.below;
                a.above += b.above;
            }
            _ => return Err(Error::Dimension("merging histograms with different bins".into())),
        }
        self.updates += other.updates;
        self.total.merge(&other.total);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        for (a, b) in self.moments.iter_mut().zip(&other.moments) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn summary(&self) -> MeasureSummary {
        MeasureSummary {
            updates: self.updates,
            total_weight: self.total_weight(),
            integrals: self
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), self.integrate(i)))
                .collect(),
            moments: (0..self.d)
                .map(|i| (1..=MOMENT_ORDER).map(|p| self.moment(i, p)).collect())
                .collect(),
            histogram: self.histogram.clone(),
        }
    }
}

/// Richardson-Romberg combination `2 ν^{(ρ)}(f) - ν(f)`. The half-step
/// measure must have received two updates (`Ȳ_{2(k-1)}` and `Ȳ_{2k-1}`, each
/// with weight `η_k/2`) per update of the full-step measure.
pub fn rr_combine(
    nu_half: &WeightedEmpiricalMeasure,
    nu_full: &WeightedEmpiricalMeasure,
    f: usize,
) -> Result<f64> {
    if nu_half.updates != 2 * nu_full.updates {
        return Err(Error::Precondition(format!(
            "half-step measure has {} updates, expected twice the {} of the full-step measure",
            nu_half.updates, nu_full.updates
        )));
    }
    Ok(2.0 * nu_half.integrate(f) - nu_full.integrate(f))
}

/// Weighted empirical measure over pairs `(x, y) ∈ ℝ^d × ℝ^d`.
#[derive(Clone)]
pub struct CouplingMeasure {
    d: usize,
    metric: MetricS,
    probe_delta: Option<f64>,
    updates: u64,
    total: KahanSum,
    near_diagonal: KahanSum,
    names: Vec<String>,
    fns: Vec<PairField>,
    off_diagonal_only: Vec<bool>,
    sums: Vec<KahanSum>,
    atoms: Option<Vec<(f64, Vec<f64>, Vec<f64>)>>,
}

impl std::fmt::Debug for CouplingMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CouplingMeasure")
            .field("d", &self.d)
            .field("updates", &self.updates)
            .field("total", &self.total.value())
            .field("functions", &self.names)
            .finish()
    }
}

impl CouplingMeasure {
    pub fn new(metric: MetricS) -> Self {
        CouplingMeasure {
            d: metric.dim(),
            metric,
            probe_delta: None,
            updates: 0,
            total: KahanSum::new(),
            near_diagonal: KahanSum::new(),
            names: Vec::new(),
            fns: Vec::new(),
            off_diagonal_only: Vec::new(),
            sums: Vec::new(),
            atoms: None,
        }
    }

    /// Probe the mass within a fixed S-distance `delta` of the diagonal
    /// instead of the default relative band.
    pub fn with_probe_delta(mut self, delta: f64) -> Self {
        self.probe_delta = Some(delta);
        self
    }

    /// Keep every weighted atom so that pair functionals can be integrated
    /// after the fact.
    pub fn retain_atoms(mut self) -> Self {
        self.atoms = Some(Vec::new());
        self
    }

    pub fn metric(&self) -> &MetricS {
        &self.metric
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> usize {
        self.push(name.into(), Arc::new(f), false)
    }

    /// Register a functional that is undefined on the diagonal; pairs within
    /// the diagonal band contribute nothing to it.
    pub fn register_off_diagonal(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> usize {
        self.push(name.into(), Arc::new(f), true)
    }

    fn push(&mut self, name: String, f: PairField, off: bool) -> usize {
        assert_eq!(self.updates, 0, "functionals must be registered before updates");
        self.names.push(name);
        self.fns.push(f);
        self.off_diagonal_only.push(off);
        self.sums.push(KahanSum::new());
        self.fns.len() - 1
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn total_weight(&self) -> f64 {
        self.total.value()
    }

    pub fn update(&mut self, weight: f64, x: &[f64], y: &[f64]) {
        self.updates += 1;
        self.total.add(weight);
        let dist = self.metric.distance(x, y);
        let near = dist < self.metric.diagonal_threshold(x, y);
        let probe = match self.probe_delta {
            Some(delta) => dist < delta,
            None => near,
        };
        if probe {
            self.near_diagonal.add(weight);
        }
        for ((f, s), off) in self.fns.iter().zip(self.sums.iter_mut()).zip(&self.off_diagonal_only) {
            if *off && near {
                continue;
            }
            s.add(weight * f(x, y));
        }
        if let Some(atoms) = self.atoms.as_mut() {
            atoms.push((weight, x.to_vec(), y.to_vec()));
        }
    }

    pub fn integrate(&self, idx: usize) -> f64 {
        self.sums[idx].value() / self.total.value()
    }

    pub fn integrate_named(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.integrate(i))
    }

    /// Weighted fraction of pairs within the probe band of the diagonal.
    pub fn diagonal_fraction(&self) -> f64 {
        self.near_diagonal.value() / self.total.value()
    }

    pub fn atoms(&self) -> Option<&[(f64, Vec<f64>, Vec<f64>)]> {
        self.atoms.as_deref()
    }

    pub fn merge(&mut self, other: &CouplingMeasure) -> Result<()> {
        if self.d != other.d || self.names != other.names || self.probe_delta != other.probe_delta {
            return Err(Error::Dimension("merging couplings with different layouts".into()));
        }
        self.updates += other.updates;
        self.total.merge(&other.total);
        self.near_diagonal.merge(&other.near_diagonal);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        match (&mut self.atoms, &other.atoms) {
            (Some(a), Some(b)) => a.extend(b.iter().cloned()),
            (None, None) => {}
            _ => return Err(Error::Dimension("merging couplings with different atom retention".into())),
        }
        Ok(())
    }
}

/// `∫ Λ dm` over the off-diagonal part of a retained-atom coupling,
/// normalized by the coupling's total weight.
pub fn integrated_nils(
    coupling: &CouplingMeasure,
    nils_fn: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    let atoms = coupling.atoms().ok_or_else(|| {
        Error::Precondition("coupling was built without retained atoms".into())
    })?;
    let metric = coupling.metric();
    let mut acc = KahanSum::new();
    let mut total = KahanSum::new();
    let mut off = 0.0;
    for (w, x, y) in atoms {
        total.add(*w);
        if metric.is_near_diagonal(x, y) {
            continue;
        }
        off += w;
        acc.add(w * nils_fn(x, y));
    }
    if off == 0.0 {
        return Err(Error::DegenerateCoupling(
            "all coupling mass lies within the diagonal band".into(),
        ));
    }
    Ok(acc.value() / total.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_weighted_updates() {
        let mut m = WeightedEmpiricalMeasure::new(1);
        let f = m.register("cube", |x| x[0].powi(3));
        m.update(2.5, &[1.2]);
        assert!((m.integrate(f) - 1.2f64.powi(3)).abs() < 1e-15);
        let mut m = WeightedEmpiricalMeasure::new(1);
        let id = m.register("x", |x| x[0]);
        m.update(1.0, &[0.0]);
        m.update(3.0, &[2.0]);
        assert_eq!(m.integrate(id), 1.5);
        assert_eq!(m.mass(), 1.0);
        assert_eq!(m.moment(0, 1), 1.5);
    }

    #[test]
    fn rr_combine_examples() {
        let mut half = WeightedEmpiricalMeasure::new(1);
        let mut full = WeightedEmpiricalMeasure::new(1);
        let fh = half.register("x", |x| x[0]);
        let ff = full.register("x", |x| x[0]);
        assert_eq!(fh, ff);
        half.update(0.5, &[1.0]);
        half.update(0.5, &[1.0]);
        full.update(1.0, &[0.0]);
        assert_eq!(rr_combine(&half, &full, fh).unwrap(), 2.0);
        full.update(1.0, &[0.0]);
        assert!(rr_combine(&half, &full, fh).is_err());
    }

    #[test]
    fn histogram_accounts_for_all_weight() {
        let mut m = WeightedEmpiricalMeasure::new(1).with_histogram(Histogram::new(0, -1.0, 1.0, 4).unwrap());
        for (w, x) in [(1.0, -2.0), (0.5, -0.9), (0.25, 0.1), (2.0, 1.0), (0.125, 0.99)] {
            m.update(w, &[x]);
        }
        let h = m.histogram().unwrap();
        let inside: f64 = h.weights.iter().sum();
        assert_eq!(inside + h.below + h.above, m.total_weight());
        assert_eq!(h.below, 1.0);
        assert_eq!(h.above, 2.0);
        assert_eq!(h.rows()[0], (-1.0, -0.5, 0.5));
    }

    #[test]
    fn coupling_two_atoms() {
        let mut c = CouplingMeasure::new(MetricS::identity(1)).retain_atoms();
        let lam = |x: &[f64], y: &[f64]| x[0] * y[0] + x[0];
        c.update(1.0, &[1.0], &[2.0]);
        c.update(1.0, &[2.0], &[1.0]);
        let v = integrated_nils(&c, lam).unwrap();
        assert_eq!(v, (lam(&[1.0], &[2.0]) + lam(&[2.0], &[1.0])) / 2.0);
        let mut c = CouplingMeasure::new(MetricS::identity(1)).retain_atoms();
        c.update(1.0, &[1.0], &[1.0]);
        assert!(matches!(integrated_nils(&c, lam), Err(Error::DegenerateCoupling(_))));
        assert_eq!(c.diagonal_fraction(), 1.0);
    }

    #[test]
    fn off_diagonal_functional_skips_diagonal_pairs() {
        let mut c = CouplingMeasure::new(MetricS::identity(1));
        let f = c.register_off_diagonal("inv", |x, y| 1.0 / (x[0] - y[0]));
        c.update(1.0, &[0.0], &[0.0]);
        c.update(1.0, &[1.0], &[0.5]);
        assert_eq!(c.integrate(f), 1.0);
    }
}
