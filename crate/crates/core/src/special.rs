//! Real-valued Lambert W function on branches 0 and -1.
//!
//! W solves `w * exp(w) = z`. The principal branch covers `z >= -1/e` with
//! `W >= -1`; branch -1 covers `-1/e <= z < 0` with `W <= -1`. Both are
//! needed by the buffer-content closed forms: the density exponent is built
//! from whichever branch yields the nontrivial root of
//! `lambda * exp(p*M) = lambda + p`.

use crate::error::{Error, Result};

/// Which real branch of the Lambert W function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WBranch {
    /// W_0, defined on z >= -1/e with W >= -1.
    Principal,
    /// W_{-1}, defined on -1/e <= z < 0 with W <= -1.
    MinusOne,
}

const NEG_INV_E: f64 = -0.36787944117144233; // -1/e rounded to f64
const MAX_ITER: usize = 50;

/// Evaluate the Lambert W function on the requested branch.
///
/// The initial guess comes from series or logarithmic asymptotics (with the
/// square-root expansion near the branch point `z = -1/e`), refined by
/// Halley's method. Residuals converge to machine precision; values within a
/// few ulp below -1/e are treated as the branch point itself.
pub fn lambert_w(branch: WBranch, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("lambert_w: z = {z} is not finite")));
    }
    let gap = z - NEG_INV_E;
    if gap < 0.0 {
        if gap > -1e-14 {
            return Ok(-1.0);
        }
        return Err(Error::Domain(format!(
            "lambert_w: z = {z} below the branch point -1/e"
        )));
    }
    match branch {
        WBranch::Principal => {
            if z == 0.0 {
                return Ok(0.0);
            }
            if gap == 0.0 {
                return Ok(-1.0);
            }
            halley(z, initial_principal(z), -1.0, f64::INFINITY)
        }
        WBranch::MinusOne => {
            if z >= 0.0 {
                return Err(Error::Domain(format!(
                    "lambert_w: branch -1 requires z < 0, got {z}"
                )));
            }
            if gap == 0.0 {
                return Ok(-1.0);
            }
            halley(z, initial_minus_one(z), f64::NEG_INFINITY, -1.0)
        }
    }
}

fn initial_principal(z: f64) -> f64 {
    let e = std::f64::consts::E;
    if z < -0.32 {
        // square-root expansion at the branch point
        let p = (2.0 * (e * z + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z < 0.5 {
        // series W = z - z^2 + 3/2 z^3 - ...
        let w = z * (1.0 - z + 1.5 * z * z);
        w.max(-0.99)
    } else if z < 4.0 {
        0.75 * z.ln_1p()
    } else {
        // asymptotic: L1 - L2 + L2/L1
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

fn initial_minus_one(z: f64) -> f64 {
    let e = std::f64::consts::E;
    if z < -0.27 {
        let p = (2.0 * (e * z + 1.0)).sqrt();
        -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
    } else {
        // z -> 0^-: W ~ ln(-z) - ln(-ln(-z))
        let l1 = (-z).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    }
}

/// Halley iteration on f(w) = w e^w - z, clamped to the branch range.
fn halley(z: f64, w0: f64, lo: f64, hi: f64) -> Result<f64> {
    let mut w = w0.clamp(lo, hi);
    let scale = z.abs().max(1e-300);
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        if f == 0.0 {
            return Ok(w);
        }
        let d1 = ew * (1.0 + w);
        let d2 = ew * (2.0 + w);
        let denom = d1 - f * d2 / (2.0 * d1);
        let step = if denom != 0.0 && denom.is_finite() {
            f / denom
        } else if d1 != 0.0 {
            f / d1
        } else {
            return Err(Error::Convergence(
                "lambert_w: stationary iteration at the branch point".into(),
            ));
        };
        let next = (w - step).clamp(lo, hi);
        let done = (next - w).abs() <= 1e-16 * next.abs().max(1e-3);
        w = next;
        if done {
            let resid = (w * w.exp() - z).abs();
            if resid <= 1e-12 * scale.max(1.0) || resid <= 1e-13 {
                return Ok(w);
            }
        }
    }
    let resid = (w * w.exp() - z).abs();
    if resid <= 1e-12 * scale.max(1.0) {
        return Ok(w);
    }
    Err(Error::Convergence(format!(
        "lambert_w: no convergence for z = {z} (residual {resid:.3e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: bracketed bisection on w*e^w = z.
    fn bisect_w(z: f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = |w: f64| w * w.exp() - z;
        assert!(g(lo) * g(hi) <= 0.0, "oracle bracket invalid");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn trivial_values() {
        assert_eq!(lambert_w(WBranch::Principal, 0.0).unwrap(), 0.0);
        assert_eq!(lambert_w(WBranch::Principal, NEG_INV_E).unwrap(), -1.0);
        assert_eq!(lambert_w(WBranch::MinusOne, NEG_INV_E).unwrap(), -1.0);
    }

    #[test]
    fn omega_constant() {
        // W_0(1) against a bisection oracle
        let oracle = bisect_w(1.0, 0.0, 1.0);
        let w = lambert_w(WBranch::Principal, 1.0).unwrap();
        assert!((w - oracle).abs() < 1e-12);
        assert!((w - 0.567143).abs() < 1e-6);
    }

    #[test]
    fn minus_one_branch_value() {
        let z = -0.3033;
        let oracle = bisect_w(z, -6.0, -1.0);
        let w = lambert_w(WBranch::MinusOne, z).unwrap();
        assert!((w - oracle).abs() < 1e-12, "w={w} oracle={oracle}");
        assert!((w - (-1.756)).abs() < 1e-3);
    }

    #[test]
    fn domain_errors() {
        assert!(lambert_w(WBranch::Principal, -0.4).is_err());
        assert!(lambert_w(WBranch::MinusOne, 0.0).is_err());
        assert!(lambert_w(WBranch::MinusOne, 0.5).is_err());
        assert!(lambert_w(WBranch::MinusOne, -1.0).is_err());
    }

    #[test]
    fn near_branch_point() {
        for &eps in &[1e-12, 1e-9, 1e-6, 1e-3] {
            let z = NEG_INV_E + eps;
            let w0 = lambert_w(WBranch::Principal, z).unwrap();
            let wm = lambert_w(WBranch::MinusOne, z).unwrap();
            assert!(w0 >= -1.0 && wm <= -1.0);
            assert!((w0 * w0.exp() - z).abs() <= 1e-13);
            assert!((wm * wm.exp() - z).abs() <= 1e-13);
        }
    }

    proptest! {
        #[test]
        fn principal_residual_and_range(z in -0.3678f64..1e6) {
            let w = lambert_w(WBranch::Principal, z).unwrap();
            prop_assert!(w >= -1.0);
            let resid = (w * w.exp() - z).abs();
            prop_assert!(resid <= 1e-12 * z.abs().max(1.0), "z={} w={} resid={}", z, w, resid);
        }

        #[test]
        fn minus_one_residual_and_range(z in -0.3678f64..-1e-12) {
            let w = lambert_w(WBranch::MinusOne, z).unwrap();
            prop_assert!(w <= -1.0);
            let resid = (w * w.exp() - z).abs();
            prop_assert!(resid <= 1e-12 * z.abs().max(1.0), "z={} w={} resid={}", z, w, resid);
        }

        #[test]
        fn monotone(a in -0.36f64..100.0, b in -0.36f64..100.0) {
            // keep the arguments far enough apart that strictness is
            // meaningful at double precision
            prop_assume!(b - a > 1e-9 * b.abs().max(1.0));
            let wa = lambert_w(WBranch::Principal, a).unwrap();
            let wb = lambert_w(WBranch::Principal, b).unwrap();
            prop_assert!(wa < wb);
            if b < 0.0 {
                let ma = lambert_w(WBranch::MinusOne, a).unwrap();
                let mb = lambert_w(WBranch::MinusOne, b).unwrap();
                prop_assert!(ma > mb, "branch -1 must decrease: W({})={} W({})={}", a, ma, b, mb);
            }
        }
    }
}
