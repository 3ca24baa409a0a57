//! Adaptive composite Simpson quadrature.

use crate::{Error, Result};

/// Hard cap on accepted subintervals for a single integral.
pub const MAX_SUBINTERVALS: usize = 1_000_000;

/// Default absolute tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol` by interval
/// bisection. Reversed bounds give the negated integral.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Quadrature(format!("infinite interval [{a}, {b}]")));
    }
    // A few initial panels keep narrow features from being skipped.
    const INITIAL: usize = 8;
    let h = (b - a) / INITIAL as f64;
    let mut stack = Vec::with_capacity(64);
    let mut left_f = f(a);
    for k in 0..INITIAL {
        let pa = a + h * k as f64;
        let pb = if k + 1 == INITIAL { b } else { a + h * (k + 1) as f64 };
        let pm = 0.5 * (pa + pb);
        let fm = f(pm);
        let fb = f(pb);
        stack.push(Panel {
            a: pa,
            b: pb,
            fa: left_f,
            fm,
            fb,
            whole: simpson(pa, pb, left_f, fm, fb),
            tol: tol / INITIAL as f64,
        });
        left_f = fb;
    }

    let mut total = 0.0;
    let mut comp = 0.0;
    let mut accepted = 0usize;
    while let Some(p) = stack.pop() {
        if !(p.fa.is_finite() && p.fm.is_finite() && p.fb.is_finite()) {
            return Err(Error::Quadrature(format!(
                "non-finite integrand near x = {}",
                if p.fa.is_finite() { p.b } else { p.a }
            )));
        }
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let diff = left + right - p.whole;
        let tiny = (p.b - p.a) <= 64.0 * f64::EPSILON * p.a.abs().max(p.b.abs());
        // Halving the tolerance on every split eventually asks for more than
        // the integrand's own rounding noise allows.
        let noise = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        if diff.abs() <= 15.0 * p.tol.max(noise) || tiny {
            if tiny && diff.abs() > 15.0 * p.tol && diff.abs() > 1e3 * tol {
                return Err(Error::Quadrature(format!(
                    "interval collapsed near x = {m} without convergence (local error {:e})",
                    diff.abs() / 15.0
                )));
            }
            // Kahan-compensated running total.
            let y = left + right + diff / 15.0 - comp;
            let t = total + y;
            comp = (t - total) - y;
            total = t;
            accepted += 1;
            if accepted > MAX_SUBINTERVALS {
                return Err(Error::Quadrature("subinterval cap exceeded".into()));
            }
        } else {
            if stack.len() + accepted > MAX_SUBINTERVALS {
                return Err(Error::Quadrature(format!(
                    "subinterval cap exceeded near x = {m}"
                )));
            }
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                tol: 0.5 * p.tol,
            });
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
                tol: 0.5 * p.tol,
            });
        }
    }
    Ok(total)
}

/// Which end of the interval may carry an integrable singularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingularEnd {
    Left,
    Right,
}

/// Integrate over `[a, b]` when `f` may be singular at one endpoint. The
/// singular end is approached through geometrically shrinking panels that
/// never evaluate `f` at the endpoint itself. Fails when the panel
/// contributions do not decay (a non-integrable singularity).
pub fn integrate_singular<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    end: SingularEnd,
    tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        let flipped = match end {
            SingularEnd::Left => SingularEnd::Right,
            SingularEnd::Right => SingularEnd::Left,
        };
        return integrate_singular(f, b, a, flipped, tol).map(|v| -v);
    }
    let width = b - a;
    let mut total = 0.0;
    let mut last = f64::INFINITY;
    let mut small_run = 0;
    for k in 0..200 {
        let outer = width * 0.5f64.powi(k);
        let inner = width * 0.5f64.powi(k + 1);
        let (lo, hi) = match end {
            SingularEnd::Left => (a + inner, a + outer),
            SingularEnd::Right => (b - outer, b - inner),
        };
        if hi <= lo {
            break;
        }
        let piece = integrate(&mut f, lo, hi, tol * 0.5f64.powi(k.min(40) + 1))?;
        total += piece;
        if piece.abs() < 1e-3 * tol && piece.abs() <= last {
            small_run += 1;
            if small_run >= 3 {
                return Ok(total);
            }
        } else {
            small_run = 0;
        }
        last = piece.abs();
    }
    Err(Error::Quadrature(format!(
        "panel contributions do not decay toward x = {}",
        match end {
            SingularEnd::Left => a,
            SingularEnd::Right => b,
        }
    )))
}

/// Integrate to relative tolerance `rel` of a coarse first estimate,
/// with absolute floor `abs_floor`. For integrands spanning many orders
/// of magnitude.
pub fn integrate_rel<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel: f64, abs_floor: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    const N: usize = 32;
    let h = (b - a) / N as f64;
    let mut scale = 0.0f64;
    for k in 0..=N {
        let v = f(a + h * k as f64);
        if v.is_finite() {
            scale += v.abs() * h.abs();
        }
    }
    integrate(f, a, b, abs_floor.max(rel * scale))
}
