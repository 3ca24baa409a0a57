//! Explicit Euler-Maruyama integrators.

use crate::model::Model;
use crate::schedule::{CorrelationSpec, NoiseStream};
use crate::{Error, Result};

/// Any coordinate beyond this magnitude counts as a blow-up.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[inline]
fn check_finite(x: &[f64], step: u64) -> Result<()> {
    if x.iter().all(|v| v.abs() <= DIVERGENCE_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Reusable buffers for in-place Euler steps of one model.
#[derive(Clone, Debug)]
pub struct Stepper {
    d: usize,
    q: usize,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

impl Stepper {
    pub fn new(model: &Model) -> Self {
        Stepper {
            d: model.d(),
            q: model.q(),
            b: vec![0.0; model.d()],
            sigma: vec![0.0; model.d() * model.q()],
        }
    }

    /// `x ← x + γ b(x) + √γ σ(x) noise`. `step` labels a divergence error.
    #[inline]
    pub fn step(
        &mut self,
        model: &Model,
        x: &mut [f64],
        gamma: f64,
        noise: &[f64],
        step: u64,
    ) -> Result<()> {
        model.drift_into(x, &mut self.b);
        model.diffusion_into(x, &mut self.sigma);
        let sg = gamma.sqrt();
        let q = self.q;
        for i in 0..self.d {
            let row = &self.sigma[i * q..(i + 1) * q];
            let mut acc = 0.0;
            for (s, z) in row.iter().zip(noise) {
                acc += s * z;
            }
            x[i] += gamma * self.b[i] + sg * acc;
        }
        check_finite(x, step)
    }
}

/// One Euler step from `x` with step `gamma` and innovation `noise`.
pub fn euler_step(model: &Model, x: &[f64], gamma: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", "step must be positive"));
    }
    if x.len() != model.d() || noise.len() != model.q() {
        return Err(Error::Dimension(format!(
            "expected state of length {} and noise of length {}",
            model.d(),
            model.q()
        )));
    }
    let mut out = x.to_vec();
    Stepper::new(model).step(model, &mut out, gamma, noise, 1)?;
    Ok(out)
}

/// State of the Richardson-Romberg pair after `n` macro-steps: `x = X̄_n`,
/// `y = Ȳ_{2n}` and `y_mid = Ȳ_{2n-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_mid: Vec<f64>,
    pub n: u64,
}

impl PairState {
    /// Start both schemes from `x0`.
    pub fn new(x0: &[f64]) -> Self {
        Self::with_starts(x0, x0)
    }

    pub fn with_starts(x0: &[f64], y0: &[f64]) -> Self {
        PairState {
            x: x0.to_vec(),
            y: y0.to_vec(),
            y_mid: y0.to_vec(),
            n: 0,
        }
    }
}

/// Advances the coupled pair: `X̄` with step `γ_n` and noise `U_n`, `Ȳ` with
/// two half-steps driven by `Z^{(ρ)}_{2n-1}`, `Z^{(ρ)}_{2n}`.
#[derive(Clone, Debug)]
pub struct PairStepper {
    x_step: Stepper,
    y_step: Stepper,
}

impl PairStepper {
    pub fn new(model: &Model) -> Self {
        PairStepper {
            x_step: Stepper::new(model),
            y_step: Stepper::new(model),
        }
    }

    pub fn advance(
        &mut self,
        model: &Model,
        state: &mut PairState,
        gamma: f64,
        correlation: &CorrelationSpec,
        stream: &mut NoiseStream,
    ) -> Result<()> {
        let noise = stream.next_noise(correlation);
        let n = state.n + 1;
        self.x_step.step(model, &mut state.x, gamma, &noise.u, n)?;
        let half = 0.5 * gamma;
        self.y_step.step(model, &mut state.y, half, &noise.zr1, n)?;
        state.y_mid.copy_from_slice(&state.y);
        self.y_step.step(model, &mut state.y, half, &noise.zr2, n)?;
        state.n = n;
        Ok(())
    }
}

/// Fixed-step emulation of the duplicated system `(X^{x1}, X^{(ρ),x2})` on
/// `[0, horizon]`. The observer sees `(t, X1, X2)` at `t = 0` and after every
/// step. With `ρ = I` both components receive the very same innovation
/// buffer.
pub fn simulate_duplicated_continuous<F>(
    model: &Model,
    x1: &[f64],
    x2: &[f64],
    rho: &CorrelationSpec,
    dt: f64,
    horizon: f64,
    stream: &mut NoiseStream,
    mut observer: F,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &[f64]),
{
    if !(dt > 0.0 && dt <= horizon) {
        return Err(Error::param("dt", "must satisfy 0 < dt <= horizon"));
    }
    let (d, q) = (model.d(), model.q());
    if x1.len() != d || x2.len() != d {
        return Err(Error::Dimension(format!("start points must have length {d}")));
    }
    if rho.q() != q {
        return Err(Error::Dimension(format!("rho must be {q} x {q}")));
    }
    let shared = rho.is_identity();
    let steps = (horizon / dt).round() as u64;
    let mut s1 = Stepper::new(model);
    let mut s2 = Stepper::new(model);
    let mut a = x1.to_vec();
    let mut b = x2.to_vec();
    let mut z = vec![0.0; q];
    let mut v = vec![0.0; q];
    let mut zr = vec![0.0; q];
    observer(0.0, &a, &b);
    for k in 1..=steps {
        stream.fill(&mut z);
        s1.step(model, &mut a, dt, &z, k)?;
        if shared {
            s2.step(model, &mut b, dt, &z, k)?;
        } else {
            stream.fill(&mut v);
            rho.correlate(&z, &v, &mut zr);
            s2.step(model, &mut b, dt, &zr, k)?;
        }
        observer(k as f64 * dt, &a, &b);
    }
    Ok(())
}

/// Approximate draws from the invariant law: a constant-step Euler chain
/// from `x0`, `burn` steps discarded, then every `thin`-th state kept.
pub fn sample_invariant(
    model: &Model,
    x0: &[f64],
    gamma: f64,
    burn: u64,
    thin: u64,
    n: usize,
    stream: &mut NoiseStream,
) -> Result<Vec<Vec<f64>>> {
    if !(gamma > 0.0) || thin == 0 {
        return Err(Error::param("gamma/thin", "must be positive"));
    }
    if x0.len() != model.d() {
        return Err(Error::Dimension(format!("start point must have length {}", model.d())));
    }
    let mut st = Stepper::new(model);
    let mut x = x0.to_vec();
    let mut z = vec![0.0; model.q()];
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while out.len() < n {
        k += 1;
        stream.fill(&mut z);
        st.step(model, &mut x, gamma, &z, k)?;
        if k > burn && (k - burn) % thin == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_ou, Model};
    use crate::schedule::NoiseKind;

    fn brownian(d: usize) -> Model {
        Model::new(
            "bm",
            d,
            d,
            |_, o| o.fill(0.0),
            move |_, o| {
                o.fill(0.0);
                for i in 0..d {
                    o[i * d + i] = 0.7;
                }
            },
        )
        .unwrap()
    }

    #[test]
    fn euler_step_examples() {
        let m = brownian(2);
        assert_eq!(euler_step(&m, &[1.0, -2.0], 0.3, &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        let ou = make_ou(1.0).unwrap();
        assert_eq!(euler_step(&ou, &[1.0], 0.5, &[0.0]).unwrap(), vec![0.5]);
        assert!(euler_step(&ou, &[1.0], 0.0, &[0.0]).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let m = Model::new("cubic", 1, 1, |x, o| o[0] = x[0].powi(3), |_, o| o[0] = 0.0).unwrap();
        let mut s = Stepper::new(&m);
        let mut x = vec![10.0];
        let mut err = None;
        for k in 1..100 {
            if let Err(e) = s.step(&m, &mut x, 1.0, &[0.0], k) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::Divergence { step }) if step > 1));
    }

    #[test]
    fn identical_noise_keeps_pair_together() {
        let m = brownian(2);
        let spec = CorrelationSpec::scalar(2, 1.0).unwrap();
        let mut stream = NoiseStream::new(5, 0, NoiseKind::Gaussian);
        let mut st = PairState::with_starts(&[0.0, 0.0], &[1.0, -1.0]);
        let mut p = PairStepper::new(&m);
        for k in 1..=200u64 {
            p.advance(&m, &mut st, 1.0 / k as f64, &spec, &mut stream).unwrap();
            assert!((st.x[0] - st.y[0] + 1.0).abs() < 1e-12);
            assert!((st.x[1] - st.y[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_shared_noise_is_pathwise_equal() {
        let ou = make_ou(1.0).unwrap();
        let spec = CorrelationSpec::scalar(1, 1.0).unwrap();
        let mut stream = NoiseStream::new(1, 0, NoiseKind::Gaussian);
        simulate_duplicated_continuous(&ou, &[0.4], &[0.4], &spec, 0.01, 5.0, &mut stream, |_, a, b| {
            assert_eq!(a, b)
        })
        .unwrap();
    }

    #[test]
    fn continuous_ou_gap_contracts_exactly() {
        let ou = make_ou(1.0).unwrap();
        let spec = CorrelationSpec::scalar(1, 1.0).unwrap();
        let mut stream = NoiseStream::new(2, 0, NoiseKind::Gaussian);
        let dt = 0.01;
        let mut last = (0.0, 0.0);
        simulate_duplicated_continuous(&ou, &[2.0], &[-1.0], &spec, dt, 3.0, &mut stream, |t, a, b| {
            last = (t, (a[0] - b[0]).abs())
        })
        .unwrap();
        let expected = 3.0 * (1.0 - dt).powi(300);
        assert!((last.1 - expected).abs() < 1e-12);
        assert!((expected - 3.0 * (-3.0f64).exp()).abs() < 0.01);
    }

    #[test]
    fn invariant_samples_of_ou_have_unit_half_variance() {
        let ou = make_ou(1.0).unwrap();
        let mut stream = NoiseStream::new(3, 0, NoiseKind::Gaussian);
        let xs = sample_invariant(&ou, &[0.0], 0.01, 1000, 50, 4000, &mut stream).unwrap();
        let m2 = xs.iter().map(|x| x[0] * x[0]).sum::<f64>() / xs.len() as f64;
        // Stationary Euler variance 1/(2 - γ), sampling error about 0.02.
        assert!((m2 - 1.0 / 1.99).abs() < 0.06, "{m2}");
    }
}
