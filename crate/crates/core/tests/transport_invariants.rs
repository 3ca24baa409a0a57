use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twopoint::linalg::Matrix;
use twopoint::transport::{certificate, kantorovich_dual, max_coupling_value, DiscreteMarginal};

fn symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-5.0..5.0);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

fn marginal(rng: &mut ChaCha8Rng, n: usize, uniform: bool) -> DiscreteMarginal {
    let atoms: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
    if uniform {
        return DiscreteMarginal::uniform(atoms).unwrap();
    }
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let t: f64 = w.iter().sum();
    DiscreteMarginal::new(atoms, w.into_iter().map(|v| v / t).collect()).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn couplings_respect_both_marginals_and_close_the_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (n, uniform) in [(1, true), (2, false), (7, false), (30, true), (60, false), (120, true)] {
        let cost = symmetric(&mut rng, n);
        let mu = marginal(&mut rng, n, uniform);
        let (primal, coupling) = max_coupling_value(&cost, &mu).unwrap();
        assert!(coupling.marginal_error(mu.weights()) <= 1e-10, "n={n}");
        assert!(coupling.mass.as_slice().iter().all(|&m| m >= -1e-14));
        let dual = kantorovich_dual(&cost, &mu).unwrap();
        let cert = certificate(&cost, &coupling, &dual);
        assert!((primal - dual.dual_value).abs() <= 1e-8 * (1.0 + primal.abs()), "n={n}: {primal} vs {}", dual.dual_value);
        assert!(cert.certified, "n={n}: {cert:?}");
    }
}

fn int_cost(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-20i32..20, n * n).prop_map(move |v| {
        let mut c = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i.min(j), i.max(j));
                c[(i, j)] = v[a * n + b] as f64;
            }
        }
        c
    })
}

proptest! {
    #[test]
    fn uniform_optimum_is_best_permutation(c in (1usize..=5).prop_flat_map(int_cost)) {
        let n = c.rows();
        let mu = DiscreteMarginal::uniform((0..n).map(|i| vec![i as f64]).collect()).unwrap();
        let (v, _) = max_coupling_value(&c, &mu).unwrap();
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
            / n as f64;
        prop_assert_eq!(v, best);
    }

    #[test]
    fn shifting_costs_shifts_the_optimum(c in prop::sample::select(vec![1usize, 2, 4]).prop_flat_map(int_cost), k in 0i32..10) {
        let n = c.rows();
        let mu = DiscreteMarginal::uniform((0..n).map(|i| vec![i as f64]).collect()).unwrap();
        let mut shifted = c.clone();
        shifted.as_mut_slice().iter_mut().for_each(|x| *x += k as f64);
        let (v0, _) = max_coupling_value(&c, &mu).unwrap();
        let (v1, _) = max_coupling_value(&shifted, &mu).unwrap();
        prop_assert_eq!(v1, v0 + k as f64);
    }
}
