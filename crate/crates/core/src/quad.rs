//! Adaptive Simpson quadrature.
//!
//! The integrands in this crate are piecewise smooth (densities with kinks
//! only at known break points, which callers split on), so classic adaptive
//! Simpson with Richardson correction is accurate and cheap.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 60;

/// Integrate `f` over `[a, b]` to absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Param("integrate: bounds must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, abs_tol, MAX_DEPTH)
}

/// Integrate `f` over `[a, ∞)` by doubling panels until the increment is
/// negligible. Intended for integrands with (at least) exponential decay.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64) -> Result<f64> {
    let mut lo = a;
    let mut len = 1.0_f64.max(a.abs());
    let mut total = 0.0;
    for _ in 0..128 {
        let part = integrate(&f, lo, lo + len, abs_tol * 0.25)?;
        total += part;
        lo += len;
        len *= 2.0;
        if part.abs() < abs_tol * 0.25 {
            return Ok(total);
        }
    }
    Err(Error::Quadrature(format!(
        "integral over [{a}, inf) did not settle below {abs_tol:.2e}"
    )))
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol || (b - a) < 1e-15 * (a.abs() + b.abs() + 1.0) {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "max subdivision depth reached on [{a}, {b}] (err {:.2e}, tol {:.2e})",
            err.abs(),
            tol
        )));
    }
    let l = adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_endpoint() {
        // infinite derivative at 0: adaptive refinement must localize it
        let v = integrate(|x| x.sqrt(), 0.0, 4.0, 1e-11).unwrap();
        assert!((v - 16.0 / 3.0).abs() < 1e-9, "v={v}");
    }

    #[test]
    fn exponential_tail() {
        let v = integrate_to_inf(|x| (-x).exp(), 0.0, 1e-11).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oscillatory() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        let exact = (1.0 - (10.0 * std::f64::consts::PI).cos()) / 10.0;
        assert!((v - exact).abs() < 1e-10);
    }
}
