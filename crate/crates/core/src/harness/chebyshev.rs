//! Chebyshev series on an interval: interpolation at Lobatto points,
//! Clenshaw evaluation, exact differentiation and integration.

#[derive(Clone, Debug)]
pub struct Chebyshev {
    lo: f64,
    hi: f64,
    coeffs: Vec<f64>,
}

/// Lobatto points `cos(πj/n)` mapped to `[lo, hi]`, `j = 0..=n`.
pub fn lobatto_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|j| {
            let t = (std::f64::consts::PI * j as f64 / n as f64).cos();
            0.5 * (hi + lo) + 0.5 * (hi - lo) * t
        })
        .collect()
}

impl Chebyshev {
    /// Interpolant through `values` at `lobatto_points(lo, hi, n)`.
    pub fn from_values(lo: f64, hi: f64, values: &[f64]) -> Self {
        let n = values.len() - 1;
        let mut coeffs = vec![0.0; n + 1];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, v) in values.iter().enumerate() {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                s += w * v * (std::f64::consts::PI * (j * k) as f64 / n as f64).cos();
            }
            *c = 2.0 * s / n as f64;
        }
        coeffs[0] *= 0.5;
        coeffs[n] *= 0.5;
        Chebyshev { lo, hi, coeffs }
    }

    pub fn interpolate(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let v: Vec<f64> = lobatto_points(lo, hi, n).into_iter().map(f).collect();
        Self::from_values(lo, hi, &v)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Zero the trailing coefficients below `rel` times the largest one.
    pub fn chop(mut self, rel: f64) -> Self {
        let top = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let cut = rel * top;
        let keep = self.coeffs.iter().rposition(|c| c.abs() > cut).map_or(1, |p| p + 1);
        self.coeffs.truncate(keep);
        self
    }

    /// Magnitude of the last few coefficients relative to the largest.
    pub fn tail_ratio(&self) -> f64 {
        let top = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if top == 0.0 {
            return 0.0;
        }
        let k = self.coeffs.len().min(4);
        self.coeffs[self.coeffs.len() - k..].iter().fold(0.0f64, |m, c| m.max(c.abs())) / top
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (2.0 * x - self.lo - self.hi) / (self.hi - self.lo);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs[0]
    }

    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        if n <= 1 {
            return Chebyshev { lo: self.lo, hi: self.hi, coeffs: vec![0.0] };
        }
        let mut d = vec![0.0; n + 1];
        for k in (1..n).rev() {
            d[k - 1] = d[k + 1] + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let scale = 2.0 / (self.hi - self.lo);
        d.iter_mut().for_each(|c| *c *= scale);
        Chebyshev { lo: self.lo, hi: self.hi, coeffs: d }
    }

    /// Antiderivative vanishing at `x0`.
    pub fn integral(&self, x0: f64) -> Self {
        let n = self.coeffs.len();
        let c = |k: usize| if k < n { self.coeffs[k] } else { 0.0 };
        let mut out = vec![0.0; n + 1];
        let half = 0.5 * (self.hi - self.lo);
        for k in 1..=n {
            let prev = if k == 1 { 2.0 * c(0) } else { c(k - 1) };
            out[k] = half * (prev - c(k + 1)) / (2.0 * k as f64);
        }
        let mut s = Chebyshev { lo: self.lo, hi: self.hi, coeffs: out };
        s.coeffs[0] = -s.eval(x0);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_calculus() {
        let p = Chebyshev::interpolate(-2.0, 3.0, 12, |x| x * x * x - 2.0 * x + 1.0).chop(1e-14);
        assert_eq!(p.coeffs().len(), 4);
        for x in [-2.0, -0.3, 1.7, 3.0] {
            assert!((p.eval(x) - (x * x * x - 2.0 * x + 1.0)).abs() < 1e-12);
            assert!((p.derivative().eval(x) - (3.0 * x * x - 2.0)).abs() < 1e-11);
            assert!((p.derivative().derivative().eval(x) - 6.0 * x).abs() < 1e-10);
            let i = p.integral(0.0).eval(x);
            assert!((i - (x.powi(4) / 4.0 - x * x + x)).abs() < 1e-11);
        }
    }

    #[test]
    fn smooth_function_converges() {
        let e = Chebyshev::interpolate(-1.0, 1.0, 40, f64::exp);
        assert!(e.tail_ratio() < 1e-15);
        assert!((e.derivative().eval(0.4) - 0.4f64.exp()).abs() < 1e-12);
    }
}
