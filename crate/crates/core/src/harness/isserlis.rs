//! Gaussian tensor moments by Isserlis pairing enumeration and the bias
//! functionals `φ₁`, `φ₂` built from them.

use crate::linalg::Matrix;
use crate::model::Model;
use crate::{Error, Result};

/// Access to the derivative tensors `D^k g(x)`, flattened row-major with
/// `d^k` entries.
pub trait DerivativeTensors: Sync {
    fn dim(&self) -> usize;
    fn max_order(&self) -> usize;
    fn tensor(&self, x: &[f64], k: usize) -> Result<Vec<f64>>;
}

/// Closure-backed derivative tensors.
pub struct TensorOracle<F> {
    pub d: usize,
    pub max_order: usize,
    pub f: F,
}

impl<F: Fn(&[f64], usize) -> Vec<f64> + Sync> DerivativeTensors for TensorOracle<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn max_order(&self) -> usize {
        self.max_order
    }
    fn tensor(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if k > self.max_order {
            return Err(Error::Unavailable(format!("derivative of order {k}")));
        }
        Ok((self.f)(x, k))
    }
}

/// All perfect matchings of `0..m`.
pub fn pairings(m: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        let a = rest[0];
        for i in 1..rest.len() {
            let b = rest[i];
            let remaining: Vec<usize> = rest[1..].iter().cloned().filter(|&c| c != b).collect();
            cur.push((a, b));
            rec(&remaining, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m % 2 == 0 {
        rec(&(0..m).collect::<Vec<_>>(), &mut Vec::new(), &mut out);
    }
    out
}

/// `E[T(b, .., b, σU, .., σU)]` for a symmetric tensor `T` of order
/// `nb + nu`, `U ~ N(0, I_q)` and `a = σσᵀ`.
pub fn gaussian_contraction(t: &[f64], d: usize, b: &[f64], a: &Matrix, nb: usize, nu: usize) -> f64 {
    if nu % 2 == 1 {
        return 0.0;
    }
    // Contract b into the leading slots.
    let mut cur = t.to_vec();
    for _ in 0..nb {
        let rest = cur.len() / d;
        cur = (0..rest)
            .map(|r| (0..d).map(|i| cur[i * rest + r] * b[i]).sum())
            .collect();
    }
    if nu == 0 {
        return cur[0];
    }
    let ps = pairings(nu);
    let mut idx = vec![0usize; nu];
    let mut total = 0.0;
    for (flat, v) in cur.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let mut r = flat;
        for slot in (0..nu).rev() {
            idx[slot] = r % d;
            r /= d;
        }
        let mut s = 0.0;
        for p in &ps {
            s += p.iter().map(|&(i, j)| a[(idx[i], idx[j])]).product::<f64>();
        }
        total += v * s;
    }
    total
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn local(model: &Model, x: &[f64]) -> (Vec<f64>, Matrix) {
    let b = model.drift(x);
    let s = model.diffusion(x);
    let a = s.mul(&s.transpose());
    (b, a)
}

/// `φ₁(x) = ½ D²g b⊗² + ½ E[D³g b (σU)⊗²] + (1/24) E[D⁴g (σU)⊗⁴]`.
pub fn phi1(model: &Model, g: &dyn DerivativeTensors, x: &[f64]) -> Result<f64> {
    let d = g.dim();
    if d != model.d() {
        return Err(Error::Dimension("derivative tensors and model differ in dimension".into()));
    }
    if g.max_order() < 4 {
        return Err(Error::Unavailable("phi1 needs derivatives up to order 4".into()));
    }
    let (b, a) = local(model, x);
    Ok(0.5 * gaussian_contraction(&g.tensor(x, 2)?, d, &b, &a, 2, 0)
        + 0.5 * gaussian_contraction(&g.tensor(x, 3)?, d, &b, &a, 1, 2)
        + gaussian_contraction(&g.tensor(x, 4)?, d, &b, &a, 0, 4) / 24.0)
}

/// `φ₂(x) = Σ_{k=3}^{6} C(k, 2(k-3))/k! · E[D^k g b⊗(6-k) (σU)⊗2(k-3)]`.
pub fn phi2(model: &Model, g: &dyn DerivativeTensors, x: &[f64]) -> Result<f64> {
    let d = g.dim();
    if d != model.d() {
        return Err(Error::Dimension("derivative tensors and model differ in dimension".into()));
    }
    if g.max_order() < 6 {
        return Err(Error::Unavailable("phi2 needs derivatives up to order 6".into()));
    }
    let (b, a) = local(model, x);
    let mut total = 0.0;
    for k in 3..=6 {
        let nu = 2 * (k - 3);
        let coef = binom(k, nu) / factorial(k);
        total += coef * gaussian_contraction(&g.tensor(x, k)?, d, &b, &a, k - nu, nu);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn pairing_counts() {
        assert_eq!(pairings(2).len(), 1);
        assert_eq!(pairings(4).len(), 3);
        assert_eq!(pairings(6).len(), 15);
        assert!(pairings(3).is_empty());
    }

    /// `Σ_r c_r v_r⊗k`, symmetric by construction.
    fn rank_one_sum(d: usize, k: usize, terms: &[(f64, Vec<f64>)]) -> Vec<f64> {
        let n = d.pow(k as u32);
        (0..n)
            .map(|flat| {
                terms
                    .iter()
                    .map(|(c, v)| {
                        let mut r = flat;
                        let mut p = *c;
                        for _ in 0..k {
                            p *= v[r % d];
                            r /= d;
                        }
                        p
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn contraction_matches_rank_one_oracle_and_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, q) = (2, 2);
        let sigma = Matrix::from_rows(&[vec![0.8, -0.3], vec![0.2, 1.1]]).unwrap();
        let a = sigma.mul(&sigma.transpose());
        let b = vec![0.4, -0.7];
        for (nb, nu) in [(2, 0), (1, 2), (0, 4), (2, 4), (0, 6)] {
            let k = nb + nu;
            let terms: Vec<(f64, Vec<f64>)> = (0..3)
                .map(|_| (rng.random_range(-1.0..1.0), (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let t = rank_one_sum(d, k, &terms);
            let got = gaussian_contraction(&t, d, &b, &a, nb, nu);
            // (v·b)^nb E[(v·σU)^nu] = (v·b)^nb (vᵀ a v)^{nu/2} (nu-1)!!
            let dfact = (1..nu).step_by(2).map(|i| i as f64).product::<f64>();
            let oracle: f64 = terms
                .iter()
                .map(|(c, v)| {
                    let vb: f64 = v.iter().zip(&b).map(|(p, q)| p * q).sum();
                    c * vb.powi(nb as i32) * a.quad_form(v).powi((nu / 2) as i32) * dfact
                })
                .sum();
            assert!((got - oracle).abs() < 1e-12 * (1.0 + oracle.abs()), "{nb},{nu}: {got} vs {oracle}");
            // Monte Carlo over U.
            let draws = 1_000_000;
            let (mut m, mut m2) = (0.0, 0.0);
            for _ in 0..draws {
                let u: Vec<f64> = (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let su = sigma.mul_vec(&u);
                let val: f64 = terms
                    .iter()
                    .map(|(c, v)| {
                        let vb: f64 = v.iter().zip(&b).map(|(p, q)| p * q).sum();
                        let vs: f64 = v.iter().zip(&su).map(|(p, q)| p * q).sum();
                        c * vb.powi(nb as i32) * vs.powi(nu as i32)
                    })
                    .sum();
                m += val;
                m2 += val * val;
            }
            let mean = m / draws as f64;
            let se = ((m2 / draws as f64 - mean * mean).max(0.0) / draws as f64).sqrt();
            assert!((mean - got).abs() < 4.0 * se + 1e-12, "{nb},{nu}: mc {mean} ± {se} vs {got}");
        }
    }

    #[test]
    fn phi_examples_on_ou() {
        let ou = crate::model::make_ou(1.0).unwrap();
        let quad = TensorOracle { d: 1, max_order: 6, f: |_: &[f64], k: usize| vec![if k == 2 { -1.0 } else { 0.0 }] };
        let x = [0.7];
        assert!((phi1(&ou, &quad, &x).unwrap() + 0.5 * 0.49).abs() < 1e-15);
        assert_eq!(phi2(&ou, &quad, &x).unwrap(), 0.0);
        let cubic = TensorOracle {
            d: 1,
            max_order: 6,
            f: |x: &[f64], k: usize| {
                vec![match k {
                    0 => x[0].powi(3),
                    1 => 3.0 * x[0] * x[0],
                    2 => 6.0 * x[0],
                    3 => 6.0,
                    _ => 0.0,
                }]
            },
        };
        // Only the k = 3 term of φ₂: b³ = -x³.
        assert!((phi2(&ou, &cubic, &x).unwrap() + 0.343).abs() < 1e-15);
    }
}
