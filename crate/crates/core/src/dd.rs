//! Minimal double-double arithmetic (an unevaluated sum of two `f64`s,
//! roughly 31 significant decimal digits).
//!
//! The stripe-wise finite-buffer density is an alternating sum whose terms
//! can exceed the result by many orders of magnitude; plain `f64` summation
//! loses the result entirely for moderately large capacity-to-power ratios.
//! Error-free transforms keep enough headroom for the ranges this crate
//! evaluates directly.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    // requires |a| >= |b|
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    // ln 2 to double-double precision: the f64 constant plus its residual
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, rhs: Dd) -> Dd {
        let (s1, e1) = two_sum(self.hi, rhs.hi);
        let e = e1 + self.lo + rhs.lo;
        let (hi, lo) = quick_two_sum(s1, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn add_f64(self, rhs: f64) -> Dd {
        let (s1, e1) = two_sum(self.hi, rhs);
        let e = e1 + self.lo;
        let (hi, lo) = quick_two_sum(s1, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, rhs: Dd) -> Dd {
        self.add(rhs.neg())
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    #[inline]
    pub fn mul(self, rhs: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + self.hi * rhs.lo + self.lo * rhs.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, rhs: f64) -> Dd {
        let (p, e) = two_prod(self.hi, rhs);
        let e = e + self.lo * rhs;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        let r = self.sub(rhs.mul_f64(q1));
        let q2 = r.hi / rhs.hi;
        let r = r.sub(rhs.mul_f64(q2));
        let q3 = r.hi / rhs.hi;
        Dd::new(q1, q2).add_f64(q3)
    }

    #[inline]
    pub fn div_f64(self, rhs: f64) -> Dd {
        self.div(Dd::from_f64(rhs))
    }

    /// Integer power by binary exponentiation; `x.powi(0) == 1` for any `x`.
    pub fn powi(self, n: u32) -> Dd {
        let mut result = Dd::ONE;
        let mut base = self;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(base);
            }
            base = base.mul(base);
            n >>= 1;
        }
        result
    }

    /// exp(x) by range reduction over ln 2 and a Taylor series on the
    /// reduced argument.
    pub fn exp(self) -> Dd {
        if self.hi.abs() > 690.0 {
            // out of the range this crate needs in extended precision
            return Dd::from_f64(self.to_f64().exp());
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self.sub(Dd::LN2.mul_f64(k));
        // Taylor on |r| <= ln2/2
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for i in 1..=26 {
            term = term.mul(r).div_f64(i as f64);
            sum = sum.add(term);
        }
        Dd {
            hi: libm::ldexp(sum.hi, k as i32),
            lo: libm::ldexp(sum.lo, k as i32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_f64_and_refines() {
        for &x in &[0.0, 1.0, -1.0, 0.3, -7.25, 20.0, -35.5] {
            let e = Dd::from_f64(x).exp();
            let rel = (e.to_f64() - x.exp()).abs() / x.exp();
            assert!(rel < 1e-15, "x={x} rel={rel}");
            // the low word should be a genuine refinement
            assert!(e.lo.abs() <= e.hi.abs() * 1e-15);
        }
    }

    #[test]
    fn exp_known_correction() {
        // e = 2.718281828459045235360287...; f64(e) = 2.718281828459045
        // The dd low word must carry the next ~16 digits.
        let e = Dd::ONE.exp();
        assert!((e.hi - std::f64::consts::E).abs() < 1e-15);
        assert!((e.lo - 1.4456468917292502e-16).abs() < 1e-28);
    }

    #[test]
    fn arithmetic_identities() {
        let a = Dd::from_f64(0.1).add_f64(1e-20);
        let b = Dd::from_f64(3.0);
        let prod = a.mul(b);
        let back = prod.div(b);
        assert!((back.sub(a)).to_f64().abs() < 1e-30);
        assert_eq!(Dd::from_f64(-2.5).powi(0), Dd::ONE);
        let p = Dd::from_f64(-2.0).powi(11);
        assert_eq!(p.to_f64(), -2048.0);
    }
}
