//! Discrete Kantorovich problem for the u.s.c. NILS envelope: maximize
//! `∫ Λ̄_S dm` over couplings of a discrete `ν̂` with itself, with the
//! symmetric dual `φ(x) + φ(y) ≥ Λ̄_S(x, y)` as certificate.

pub mod flow;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::confluence::diagonal::usc_diagonal;
use crate::confluence::nils::nils_or_closed_form;
use crate::confluence::MetricS;
use crate::linalg::Matrix;
use crate::model::Model;
use crate::{Error, Result};

pub const MAX_ATOMS: usize = 500;
pub const DUALITY_TOL: f64 = 1e-8;
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct DiscreteMarginal {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
    uniform: bool,
}

impl DiscreteMarginal {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::param("marginal", "need one weight per atom and at least one atom"));
        }
        let d = atoms[0].len();
        if atoms.iter().any(|a| a.len() != d) {
            return Err(Error::Dimension("atoms must share one dimension".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::param("marginal", format!("degenerate marginal: weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("marginal", format!("weights sum to {total}, not 1")));
        }
        let mut sorted: Vec<&Vec<f64>> = atoms.iter().collect();
        sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("marginal", "atoms must be distinct"));
        }
        let uniform = weights.iter().all(|w| *w == weights[0]);
        Ok(DiscreteMarginal { atoms, weights, uniform })
    }

    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(Error::param("marginal", "need at least one atom"));
        }
        DiscreteMarginal::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    fn check_cost(&self, cost: &Matrix) -> Result<()> {
        let n = self.len();
        if cost.rows() != n || cost.cols() != n {
            return Err(Error::Dimension(format!("cost must be {n} x {n}")));
        }
        if !cost.as_slice().iter().all(|c| c.is_finite()) {
            return Err(Error::param("cost", "entries must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscreteCoupling {
    pub mass: Matrix,
}

impl DiscreteCoupling {
    /// Largest deviation of row or column sums from the weights.
    pub fn marginal_error(&self, weights: &[f64]) -> f64 {
        let n = weights.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.mass[(i, j)]).sum();
            let col: f64 = (0..n).map(|j| self.mass[(j, i)]).sum();
            worst = worst.max((row - weights[i]).abs()).max((col - weights[i]).abs());
        }
        worst
    }

    /// Nonzero entries `(i, j, mass)`.
    pub fn sparse(&self) -> Vec<(usize, usize, f64)> {
        let n = self.mass.rows();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.mass[(i, j)] > 0.0)
            .map(|(i, j)| (i, j, self.mass[(i, j)]))
            .collect()
    }

    pub fn value(&self, cost: &Matrix) -> f64 {
        self.sparse().iter().map(|&(i, j, m)| m * cost[(i, j)]).sum()
    }
}

/// `Λ̄_S` at atom pairs, with the u.s.c. diagonal value on the diagonal.
/// Pairs inside the diagonal band also take the diagonal value of the
/// first atom.
pub fn usc_nils_matrix(model: &Model, s: &MetricS, marginal: &DiscreteMarginal) -> Result<Matrix> {
    let atoms = marginal.atoms();
    let n = atoms.len();
    let diag: Vec<f64> = atoms
        .par_iter()
        .map(|x| usc_diagonal(model, s, x).map(|v| v.value))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j == i || s.is_near_diagonal(&atoms[i], &atoms[j]) {
                        Ok(diag[i])
                    } else if j < i {
                        // Filled from the upper triangle below.
                        Ok(0.0)
                    } else {
                        nils_or_closed_form(model, s, &atoms[i], &atoms[j])
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut m = Matrix::from_rows(&rows)?;
    for i in 0..n {
        for j in 0..i {
            if !s.is_near_diagonal(&atoms[i], &atoms[j]) {
                m[(i, j)] = m[(j, i)];
            }
        }
    }
    Ok(m)
}

/// Unit supplies for uniform marginals, so the optimum is a permutation
/// computed in exact integer flow arithmetic.
fn supplies(marginal: &DiscreteMarginal) -> (Vec<f64>, f64) {
    if marginal.is_uniform() {
        (vec![1.0; marginal.len()], 1.0 / marginal.len() as f64)
    } else {
        (marginal.weights().to_vec(), 1.0)
    }
}

/// Exact optimum of the transportation problem (maximization) and an
/// optimal coupling.
pub fn max_coupling_value(cost: &Matrix, marginal: &DiscreteMarginal) -> Result<(f64, DiscreteCoupling)> {
    marginal.check_cost(cost)?;
    let (sup, unit) = supplies(marginal);
    let sol = flow::max_transport(cost, &sup, &sup)?;
    let mut mass = sol.flow;
    mass.scale_mut(unit);
    let coupling = DiscreteCoupling { mass };
    let err = coupling.marginal_error(marginal.weights());
    if err > MARGINAL_TOL {
        return Err(Error::Solver(format!("coupling violates marginals by {err:e}")));
    }
    let value = if marginal.is_uniform() {
        let n = marginal.len();
        let total: f64 = coupling.sparse().iter().map(|&(i, j, _)| cost[(i, j)]).sum();
        total / n as f64
    } else {
        coupling.value(cost)
    };
    Ok((value, coupling))
}

#[derive(Clone, Debug, Serialize)]
pub struct DualSolution {
    pub phi: Vec<f64>,
    pub dual_value: f64,
    /// `min_{i,j} φ_i + φ_j - cost_ij`, non-negative when feasible.
    pub min_slack: f64,
}

/// Symmetric-potential dual: minimize `2 Σ φ_i w_i` subject to
/// `φ_i + φ_j ≥ cost_ij`.
///
/// The constraint set only sees `c̃ = max(c, cᵀ)`. For symmetric `c̃`
/// the averaged transportation duals `(u + v)/2` are feasible and optimal,
/// so the dual value equals the transportation optimum for `c̃`.
pub fn kantorovich_dual(cost: &Matrix, marginal: &DiscreteMarginal) -> Result<DualSolution> {
    marginal.check_cost(cost)?;
    let n = marginal.len();
    let mut c = cost.clone();
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] = cost[(i, j)].max(cost[(j, i)]);
        }
    }
    let (sup, _) = supplies(marginal);
    let sol = flow::max_transport(&c, &sup, &sup)?;
    let v = sol.v;
    // Tighten u against v so feasibility holds to rounding exactly.
    let u: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| c[(i, j)] - v[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut phi: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
    let slack = |phi: &[f64]| {
        let mut worst = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                worst = worst.min(phi[i] + phi[j] - cost[(i, j)]);
            }
        }
        worst
    };
    let mut min_slack = slack(&phi);
    if min_slack < 0.0 {
        let shift = -0.5 * min_slack;
        phi.iter_mut().for_each(|p| *p += shift);
        min_slack = slack(&phi);
    }
    if !phi.iter().all(|p| p.is_finite()) {
        return Err(Error::Solver("dual potentials are not finite".into()));
    }
    // Both marginals are ν̂, so the objective ∫φ dν̂ + ∫φ dν̂ counts φ twice.
    let dual_value = 2.0 * phi.iter().zip(marginal.weights()).map(|(p, w)| p * w).sum::<f64>();
    Ok(DualSolution {
        phi,
        dual_value,
        min_slack,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub dual_feasible: bool,
    /// Largest `|φ_i + φ_j - cost_ij|` on the coupling support.
    pub max_support_slack: f64,
    pub certified: bool,
}

/// Complementary-slackness and duality-gap check of a primal/dual pair.
pub fn certificate(cost: &Matrix, coupling: &DiscreteCoupling, dual: &DualSolution) -> Certificate {
    let primal = coupling.value(cost);
    let tol = DUALITY_TOL * (1.0 + primal.abs());
    let max_support_slack = coupling
        .sparse()
        .iter()
        .map(|&(i, j, _)| (dual.phi[i] + dual.phi[j] - cost[(i, j)]).abs())
        .fold(0.0, f64::max);
    let gap = (dual.dual_value - primal).abs();
    let dual_feasible = dual.min_slack >= -1e-12 * (1.0 + cost.max_abs());
    Certificate {
        primal,
        dual: dual.dual_value,
        gap,
        dual_feasible,
        max_support_slack,
        certified: dual_feasible && gap <= tol,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportReport {
    pub n_atoms: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub negative: bool,
    /// `∫ Λ̄_S(x, x) ν̂(dx)`, the diagonal part of the strengthened
    /// criterion, reported alongside without adjudication.
    pub diagonal_integral: f64,
    pub certified: bool,
    pub evidence: &'static str,
    #[serde(skip)]
    pub coupling: DiscreteCoupling,
    #[serde(skip)]
    pub phi: Vec<f64>,
}

/// Subsample `n_atoms` distinct points of `nu_samples`, build `Λ̄_S` on them
/// and solve primal and dual.
pub fn weak_confluence_transport_test(
    model: &Model,
    s: &MetricS,
    nu_samples: &[Vec<f64>],
    n_atoms: usize,
    seed: u64,
) -> Result<TransportReport> {
    if n_atoms == 0 || n_atoms > MAX_ATOMS {
        return Err(Error::param("n_atoms", format!("must be in 1..={MAX_ATOMS}")));
    }
    let mut distinct: Vec<&Vec<f64>> = nu_samples.iter().collect();
    distinct.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < n_atoms {
        return Err(Error::Precondition(format!(
            "{} distinct samples, {n_atoms} atoms requested",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, distinct.len(), n_atoms).into_vec();
    idx.sort_unstable();
    let atoms: Vec<Vec<f64>> = idx.iter().map(|&i| distinct[i].clone()).collect();
    let marginal = DiscreteMarginal::uniform(atoms)?;
    let cost = usc_nils_matrix(model, s, &marginal)?;
    let (primal, coupling) = max_coupling_value(&cost, &marginal)?;
    let dual = kantorovich_dual(&cost, &marginal)?;
    let cert = certificate(&cost, &coupling, &dual);
    let diagonal_integral = (0..n_atoms).map(|i| cost[(i, i)]).sum::<f64>() / n_atoms as f64;
    Ok(TransportReport {
        n_atoms,
        primal_value: primal,
        dual_value: dual.dual_value,
        gap: cert.gap,
        negative: primal < 0.0,
        diagonal_integral,
        certified: cert.certified,
        evidence: "sampled atoms; sign is evidence for the strengthened criterion, not a proof",
        coupling,
        phi: dual.phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_double_well, make_ou};

    fn line(n: usize) -> DiscreteMarginal {
        DiscreteMarginal::uniform((0..n).map(|i| vec![i as f64 * 0.37 - 1.0]).collect()).unwrap()
    }

    #[test]
    fn two_point_swap() {
        let m = line(2);
        let c = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let (v, cp) = max_coupling_value(&c, &m).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(cp.mass[(0, 1)], 0.5);
        let d = kantorovich_dual(&c, &m).unwrap();
        assert_eq!(d.phi, vec![0.0, 0.0]);
        assert_eq!(d.dual_value, 0.0);
        let one = line(1);
        let c1 = Matrix::from_rows(&[vec![3.5]]).unwrap();
        assert_eq!(max_coupling_value(&c1, &one).unwrap().0, 3.5);
        let d1 = kantorovich_dual(&c1, &one).unwrap();
        assert_eq!(d1.phi, vec![1.75]);
        assert_eq!(d1.dual_value, 3.5);
    }

    #[test]
    fn random_symmetric_costs_close_the_gap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in [3, 8, 25] {
            let mut c = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.random_range(-2.0..1.0);
                    c[(i, j)] = v;
                    c[(j, i)] = v;
                }
            }
            let m = line(n);
            let (v, cp) = max_coupling_value(&c, &m).unwrap();
            let d = kantorovich_dual(&c, &m).unwrap();
            let cert = certificate(&c, &cp, &d);
            assert!((d.dual_value - v).abs() < 1e-9 && cert.certified, "{n}: {cert:?}");
        }
    }

    #[test]
    fn marginal_validation() {
        assert!(DiscreteMarginal::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).is_err());
        assert!(DiscreteMarginal::new(vec![vec![0.0], vec![0.0]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteMarginal::uniform((0..7).map(|i| vec![i as f64]).collect()).is_ok());
    }

    #[test]
    fn ou_matrix_is_constant() {
        let m = make_ou(1.0).unwrap();
        let s = MetricS::identity(1);
        let c = usc_nils_matrix(&m, &s, &line(6)).unwrap();
        assert!(c.as_slice().iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn double_well_diagonal_entry() {
        let m = make_double_well(1.0, 2).unwrap();
        let s = MetricS::identity(2);
        let marg = DiscreteMarginal::uniform(vec![vec![1.0, 0.0], vec![0.0, 0.5], vec![-0.3, 0.2]]).unwrap();
        let c = usc_nils_matrix(&m, &s, &marg).unwrap();
        assert!(c[(0, 0)].abs() < 1e-10);
        assert!(c.is_symmetric(0.0));
    }
}
