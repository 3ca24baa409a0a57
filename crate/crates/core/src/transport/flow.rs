//! Dense transportation solver: successive shortest augmenting paths with
//! node potentials (Dijkstra on reduced costs).

use crate::linalg::Matrix;
use crate::{Error, Result};

pub struct FlowSolution {
    pub flow: Matrix,
    /// Row and column duals with `cost[i][j] ≤ u[i] + v[j]`, equality on
    /// the support of `flow`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub augmentations: usize,
}

/// Maximize `Σ cost_ij x_ij` subject to row sums `supply` and column sums
/// `demand` (equal totals).
pub fn max_transport(cost: &Matrix, supply: &[f64], demand: &[f64]) -> Result<FlowSolution> {
    let n = supply.len();
    let m = demand.len();
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::Dimension("cost shape does not match the marginals".into()));
    }
    if !cost.as_slice().iter().all(|c| c.is_finite()) {
        return Err(Error::param("cost", "entries must be finite"));
    }
    let total: f64 = supply.iter().sum();
    let scale = supply.iter().chain(demand).cloned().fold(0.0, f64::max);
    let eps = 1e-13 * scale;
    if (total - demand.iter().sum::<f64>()).abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::param("marginal", "supply and demand totals differ"));
    }
    // Minimize a = -cost; reduced cost a_ij + pu_i - pv_j stays >= 0.
    let a = |i: usize, j: usize| -cost[(i, j)];
    let mut pu = vec![0.0; n];
    let mut pv: Vec<f64> = (0..m).map(|j| (0..n).map(|i| a(i, j)).fold(f64::INFINITY, f64::min)).collect();
    let mut rs = supply.to_vec();
    let mut rt = demand.to_vec();
    let mut flow = Matrix::zeros(n, m);
    let mut augmentations = 0;

    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; m];
    let mut done_u = vec![false; n];
    let mut done_v = vec![false; m];
    let mut pred_v = vec![usize::MAX; m];
    let mut pred_u = vec![usize::MAX; n];

    while rs.iter().any(|r| *r > eps) {
        du.iter_mut().for_each(|d| *d = f64::INFINITY);
        dv.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_u.iter_mut().for_each(|d| *d = false);
        done_v.iter_mut().for_each(|d| *d = false);
        pred_u.iter_mut().for_each(|p| *p = usize::MAX);
        for i in 0..n {
            if rs[i] > eps {
                du[i] = 0.0;
            }
        }
        let target = loop {
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_u[i] && du[i] < best {
                    best = du[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_v[j] && dv[j] < best {
                    best = dv[j];
                    pick = Some((false, j));
                }
            }
            match pick {
                None => return Err(Error::Solver("no augmenting path; marginals inconsistent".into())),
                Some((true, i)) => {
                    done_u[i] = true;
                    for j in 0..m {
                        if done_v[j] {
                            continue;
                        }
                        let nd = du[i] + (a(i, j) + pu[i] - pv[j]).max(0.0);
                        if nd < dv[j] {
                            dv[j] = nd;
                            pred_v[j] = i;
                        }
                    }
                }
                Some((false, j)) => {
                    done_v[j] = true;
                    if rt[j] > eps {
                        break j;
                    }
                    for i in 0..n {
                        if done_u[i] || flow[(i, j)] <= 0.0 {
                            continue;
                        }
                        let nd = dv[j] + (pv[j] - a(i, j) - pu[i]).max(0.0);
                        if nd < du[i] {
                            du[i] = nd;
                            pred_u[i] = j;
                        }
                    }
                }
            }
        };
        let big_d = dv[target];
        for i in 0..n {
            if done_u[i] {
                pu[i] += du[i].min(big_d);
            } else {
                pu[i] += big_d;
            }
        }
        for j in 0..m {
            if done_v[j] {
                pv[j] += dv[j].min(big_d);
            } else {
                pv[j] += big_d;
            }
        }
        // Bottleneck along the path, then push.
        let mut delta = rt[target];
        let mut j = target;
        let source = loop {
            let i = pred_v[j];
            match pred_u[i] {
                usize::MAX => break i,
                jb => {
                    delta = delta.min(flow[(i, jb)]);
                    j = jb;
                }
            }
        };
        delta = delta.min(rs[source]);
        let mut j = target;
        loop {
            let i = pred_v[j];
            flow[(i, j)] += delta;
            match pred_u[i] {
                usize::MAX => break,
                jb => {
                    let f = &mut flow[(i, jb)];
                    *f -= delta;
                    if *f <= eps {
                        *f = 0.0;
                    }
                    j = jb;
                }
            }
        }
        rs[source] -= delta;
        rt[target] -= delta;
        augmentations += 1;
        if augmentations > 50 * (n + m) * (n + m) {
            return Err(Error::Solver("augmentation limit exceeded".into()));
        }
    }
    Ok(FlowSolution {
        flow,
        u: pu,
        v: pv.iter().map(|p| -p).collect(),
        augmentations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_assignment() {
        let c = Matrix::from_rows(&[vec![1.0, 5.0, 2.0], vec![4.0, 3.0, 0.0], vec![2.0, 2.0, 9.0]]).unwrap();
        let s = max_transport(&c, &[1.0; 3], &[1.0; 3]).unwrap();
        // Best permutation: (0→1, 1→0, 2→2) = 5 + 4 + 9.
        let value: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| c[(i, j)] * s.flow[(i, j)]).sum();
        assert_eq!(value, 18.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!(c[(i, j)] <= s.u[i] + s.v[j] + 1e-12);
            }
        }
    }

    #[test]
    fn fractional_marginals() {
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let s = max_transport(&c, &[0.7, 0.3], &[0.7, 0.3]).unwrap();
        assert!((s.flow[(0, 1)] - 0.3).abs() < 1e-15);
        assert!((s.flow[(0, 0)] - 0.4).abs() < 1e-15);
    }
}
