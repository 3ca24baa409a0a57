use rayon::prelude::*;
use twopoint::engine::{simulate_duplicated_continuous, Stepper};
use twopoint::model::{make_double_well, make_ou};
use twopoint::schedule::{CorrelationSpec, NoiseKind, NoiseStream, StepSchedule};

#[test]
fn shared_noise_keeps_equal_starts_bitwise_equal() {
    let m = make_double_well(1.0, 3).unwrap();
    let rho = CorrelationSpec::scalar(3, 1.0).unwrap();
    let mut stream = NoiseStream::new(1, 0, NoiseKind::Gaussian);
    let mut same = true;
    simulate_duplicated_continuous(&m, &[0.3, -0.2, 1.1], &[0.3, -0.2, 1.1], &rho, 1e-3, 5.0, &mut stream, |_, a, b| {
        same &= a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits());
    })
    .unwrap();
    assert!(same);
}

#[test]
fn ou_second_moment_at_time_thirty() {
    let sigma = 1.0;
    let m = make_ou(sigma).unwrap();
    let rho = CorrelationSpec::scalar(1, 1.0).unwrap();
    let paths = 10_000u64;
    let finals: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut stream = NoiseStream::new(8, p, NoiseKind::Gaussian);
            let mut last = 0.0;
            simulate_duplicated_continuous(&m, &[1.0], &[1.0], &rho, 1e-3, 30.0, &mut stream, |_, a, _| last = a[0]).unwrap();
            last * last
        })
        .collect();
    let n = paths as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - 0.5 * sigma * sigma).abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn same_seed_same_trajectory() {
    let m = make_double_well(0.7, 2).unwrap();
    let run = || {
        let mut s = StepSchedule::new(1.0, 0.5).unwrap();
        let mut st = Stepper::new(&m);
        let mut stream = NoiseStream::new(42, 3, NoiseKind::Gaussian);
        let mut x = vec![0.5, -0.5];
        let mut z = vec![0.0; 2];
        let mut path = vec![];
        for k in 1..=2000 {
            let g = s.advance();
            stream.fill(&mut z);
            st.step(&m, &mut x, g, &z, k).unwrap();
            path.extend(x.iter().map(|v| v.to_bits()));
        }
        path
    };
    assert_eq!(run(), run());
}
