use proptest::prelude::*;
use twopoint::linalg::Matrix;
use twopoint::schedule::{make_correlation, NoiseKind, NoiseStream, StepSchedule};

proptest! {
    #[test]
    fn same_seed_same_stream(seed in any::<u64>(), rep in 0u64..1000) {
        let mut a = NoiseStream::new(seed, rep, NoiseKind::Gaussian);
        let mut b = NoiseStream::new(seed, rep, NoiseKind::Gaussian);
        for _ in 0..64 {
            prop_assert_eq!(a.sample().to_bits(), b.sample().to_bits());
        }
    }

    #[test]
    fn correlation_root_solves_its_equation(r in prop::collection::vec(-0.7f64..0.7, 4)) {
        let rho = Matrix::from_rows(&[vec![r[0], r[1]], vec![r[2], r[3]]]).unwrap().scaled(0.7);
        let spec = make_correlation(rho.clone()).unwrap();
        let tt = spec.t().mul(&spec.t().transpose());
        let target = Matrix::identity(2).sub(&rho.transpose().mul(&rho));
        for (p, q) in tt.as_slice().iter().zip(target.as_slice()) {
            prop_assert!((p - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn power_sums_are_direct_sums(c in 0.1f64..3.0, mu in 0.05f64..1.0) {
        let mut s = StepSchedule::new(c, mu).unwrap();
        let mut direct = [0.0; 4];
        let mut prev = f64::INFINITY;
        for k in 1..=1000u64 {
            let g = s.advance();
            prop_assert!(g <= prev);
            prev = g;
            let gk = c * (k as f64).powf(-mu);
            for r in 1..=3 {
                direct[r] += gk.powi(r as i32);
            }
        }
        prop_assert!((s.big_gamma() - direct[1]).abs() <= 1e-12 * direct[1]);
        for r in 2..=3u32 {
            let v = s.big_gamma_pow(r).unwrap();
            prop_assert!((v - direct[r as usize]).abs() <= 1e-12 * direct[r as usize]);
        }
    }
}

#[test]
fn gaussian_odd_moments_vanish() {
    let n = 1_000_000;
    let mut s = NoiseStream::new(5, 0, NoiseKind::Gaussian);
    let mut m = [0.0; 6];
    for _ in 0..n {
        let z = s.sample();
        let mut p = 1.0;
        for v in m.iter_mut() {
            p *= z;
            *v += p;
        }
    }
    // Var(Z^k) = (2k-1)!! for odd k.
    for (k, sd) in [(1, 1.0f64), (3, 15.0f64.sqrt()), (5, 945.0f64.sqrt())] {
        let mean = m[k - 1] / n as f64;
        assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt(), "order {k}: {mean}");
    }
    assert!((m[1] / n as f64 - 1.0).abs() < 0.01);
}

/// `Γ^{(3)}_n / √Γ_n` is eventually monotone: decreasing for `μ > 1/5`,
/// increasing for `μ < 1/5`.
#[test]
fn third_power_over_root_gamma_classifies_mu() {
    for (mu, decreasing) in [(0.3, true), (0.25, true), (0.15, false), (0.1, false)] {
        let mut s = StepSchedule::new(1.0, mu).unwrap();
        let mut ratios = vec![];
        for k in 1..=1_000_000u64 {
            s.advance();
            if [10_000, 100_000, 1_000_000].contains(&k) {
                ratios.push(s.big_gamma_pow(3).unwrap() / s.big_gamma().sqrt());
            }
        }
        let trend_down = ratios.windows(2).all(|w| w[1] < w[0]);
        let trend_up = ratios.windows(2).all(|w| w[1] > w[0]);
        assert!(if decreasing { trend_down } else { trend_up }, "mu {mu}: {ratios:?}");
    }
}
