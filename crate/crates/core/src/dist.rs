//! Limiting distributions of the buffer content.
//!
//! For exponential harvest the finite-buffer law is piecewise on stripes of
//! width M below the capacity: on stripe `n` the density is
//!
//! ```text
//! g_n(x) = pi(K) * lambda * e^{-lambda (x-K)}
//!          * [ 1 + sum_{q=1}^{n} e^{-delta q}/(q-1)!
//!                  * (delta q + lambda(x-K))^{q-1}
//!                  * (lambda(x-K)/q + delta - 1) ]
//! ```
//!
//! with the atom `pi(K)` fixed by unit mass. The bracketed sum alternates
//! and can cancel far below the size of its terms, so it is evaluated by
//! one of two exact routes:
//!
//! - direct summation in double-double arithmetic for small stripe indices
//!   (and moderate indices when `delta` is near 1, where the alternative
//!   converges too slowly), or
//! - a reformulation through the generating identity
//!   `sum_q (a+q)^q z^q / q! = e^{-a W_0(-z)} / (1 + W_0(-z))`: the partial
//!   sum equals a closed-form exponential minus a small same-order tail,
//!   accumulated in the log domain.
//!
//! Stripe masses have the closed form `pi(K) * C_n` with the same two
//! routes, which is how the atom is computed for any capacity.

use std::sync::Arc;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::model::HarvestModel;
use crate::quad;
use crate::special::{lambert_w, WBranch};

const MASS_TOL: f64 = 1e-9;
/// Snap tolerance for deciding that K is an integer multiple of M.
const GRID_SNAP: f64 = 1e-9;

// ---------------------------------------------------------------------------
// signed log-domain scalar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct LogVal {
    sign: f64,
    ln: f64,
}

impl LogVal {
    const ZERO: LogVal = LogVal {
        sign: 0.0,
        ln: f64::NEG_INFINITY,
    };

    fn new(sign: f64, ln: f64) -> LogVal {
        if sign == 0.0 || ln == f64::NEG_INFINITY {
            LogVal::ZERO
        } else {
            LogVal { sign, ln }
        }
    }

    fn from_f64(v: f64) -> LogVal {
        if v == 0.0 {
            LogVal::ZERO
        } else {
            LogVal {
                sign: v.signum(),
                ln: v.abs().ln(),
            }
        }
    }

    fn neg(self) -> LogVal {
        LogVal::new(-self.sign, self.ln)
    }

    fn value(self) -> f64 {
        self.sign * self.ln.exp()
    }

    fn add(self, o: LogVal) -> LogVal {
        if self.sign == 0.0 {
            return o;
        }
        if o.sign == 0.0 {
            return self;
        }
        let (big, small) = if self.ln >= o.ln {
            (self, o)
        } else {
            (o, self)
        };
        let d = small.ln - big.ln; // <= 0
        if self.sign == o.sign {
            LogVal::new(big.sign, big.ln + d.exp().ln_1p())
        } else if d == 0.0 {
            LogVal::ZERO
        } else {
            LogVal::new(big.sign, big.ln + (-d.exp_m1()).ln())
        }
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == f64::INFINITY || b == f64::INFINITY {
        return f64::INFINITY;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------------------
// decay-rate fixed points
// ---------------------------------------------------------------------------

/// Decay rate `p < 0` of the unbounded-buffer density `-p e^{p x}`: the
/// nontrivial root of `lambda e^{pM} = lambda + p`, from the principal
/// Lambert branch. Requires `delta = lambda M > 1`.
pub fn infinite_decay_rate(lambda: f64, m: f64) -> Result<f64> {
    check_rate_args(lambda, m)?;
    let delta = lambda * m;
    if delta <= 1.0 {
        return Err(Error::Regime(format!(
            "no stationary distribution for an unbounded buffer at delta = {delta} <= 1"
        )));
    }
    let w = lambert_w(WBranch::Principal, -delta * (-delta).exp())?;
    Ok((-delta - w) / m)
}

/// Exponent `d` of the finite-buffer approximation `c e^{d x}`: the same
/// fixed point, taken on branch -1 for `delta <= 1` (d >= 0) and on the
/// principal branch for `delta > 1` (d < 0). `delta = 1` gives exactly 0.
pub fn approx_decay_rate(lambda: f64, m: f64) -> Result<f64> {
    check_rate_args(lambda, m)?;
    let delta = lambda * m;
    if (delta - 1.0).abs() <= 1e-9 {
        return Ok(0.0);
    }
    let branch = if delta < 1.0 {
        WBranch::MinusOne
    } else {
        WBranch::Principal
    };
    let w = lambert_w(branch, -delta * (-delta).exp())?;
    Ok((-delta - w) / m)
}

fn check_rate_args(lambda: f64, m: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) || !(m > 0.0 && m.is_finite()) {
        return Err(Error::Param(format!(
            "rate/threshold must be positive and finite (lambda = {lambda}, M = {m})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// exact finite-buffer machinery
// ---------------------------------------------------------------------------

/// Shared parameters of the exact stripe-wise law.
#[derive(Debug)]
struct StripeFamily {
    lambda: f64,
    m: f64,
    k: f64,
    delta: f64,
    /// K / M.
    u: f64,
    /// Number of whole stripes.
    l: usize,
    /// K - l*M (0 when K is a multiple of M).
    delta_frac: f64,
    /// Index of the lowest stripe.
    l_prime: usize,
    /// ln(delta e^{-delta}).
    ln_z: f64,
    /// Conjugate of delta under z = delta e^{-delta}: equals delta for
    /// delta <= 1, otherwise the root below 1.
    delta_star: f64,
    /// ln of the full-buffer atom.
    ln_pi: f64,
}

enum EvalPath {
    DoubleDouble,
    Tail,
}

const DD_ALWAYS_N: usize = 8;
const DD_NEAR_ONE_N: usize = 38;
const TAIL_MAX_ITER: usize = 3_000_000;

impl StripeFamily {
    fn new(lambda: f64, m: f64, k: f64) -> Result<Arc<StripeFamily>> {
        check_rate_args(lambda, m)?;
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Param(format!(
                "capacity must be positive and finite, got {k}"
            )));
        }
        let delta = lambda * m;
        let u = k / m;
        let l = (u + GRID_SNAP).floor() as usize;
        let mut delta_frac = k - l as f64 * m;
        if delta_frac <= GRID_SNAP * m * u.max(1.0) {
            delta_frac = 0.0;
        }
        let l_prime = if delta_frac == 0.0 && l >= 1 {
            l - 1
        } else {
            l
        };
        let delta_star = if delta <= 1.0 {
            delta
        } else {
            -lambert_w(WBranch::Principal, -delta * (-delta).exp())?
        };
        let mut fam = StripeFamily {
            lambda,
            m,
            k,
            delta,
            u,
            l,
            delta_frac,
            l_prime,
            ln_z: delta.ln() - delta,
            delta_star,
            ln_pi: 0.0,
        };
        // 1/pi = 1 + sum_n C_n + partial-stripe term
        let mut total = LogVal::from_f64(1.0);
        for n in 0..fam.l {
            total = total.add(fam.stripe_coeff(n as f64, (n + 1) as f64, n)?);
        }
        if fam.delta_frac > 0.0 {
            total = total.add(fam.stripe_coeff(fam.l as f64, fam.u, fam.l)?);
        }
        if total.sign <= 0.0 {
            return Err(Error::Numeric(
                "full-buffer probability: normalizing sum came out non-positive".into(),
            ));
        }
        fam.ln_pi = -total.ln;
        Ok(Arc::new(fam))
    }

    fn pi(&self) -> f64 {
        self.ln_pi.exp()
    }

    /// Stripe extent [lo, hi) for index n.
    fn stripe_bounds(&self, n: usize) -> (f64, f64) {
        let hi = self.k - n as f64 * self.m;
        let lo = (self.k - (n + 1) as f64 * self.m).max(0.0);
        (lo, hi)
    }

    fn path(&self, n: usize) -> Result<EvalPath> {
        if n <= DD_ALWAYS_N {
            return Ok(EvalPath::DoubleDouble);
        }
        if (0.75..=1.25).contains(&self.delta) && n <= DD_NEAR_ONE_N {
            return Ok(EvalPath::DoubleDouble);
        }
        if (self.delta - 1.0).abs() >= 0.05 {
            return Ok(EvalPath::Tail);
        }
        Err(Error::Numeric(format!(
            "stripe sums not evaluable in double precision: delta = {} too close to 1 \
             with stripe index {} (capacity/threshold ratio too large)",
            self.delta, n
        )))
    }

    /// Bracketed stripe sum up to q = n at position t = (K - x)/M, as a
    /// signed log scalar.
    fn bracket(&self, n: usize, t: f64) -> Result<LogVal> {
        match self.path(n)? {
            EvalPath::DoubleDouble => Ok(self.bracket_dd(n, t)),
            EvalPath::Tail => self.bracket_tail(n, t),
        }
    }

    fn bracket_dd(&self, n: usize, t: f64) -> LogVal {
        let delta = Dd::from_f64(self.lambda).mul(Dd::from_f64(self.m));
        // y = lambda (x - K) = -delta * t
        let y = delta.mul_f64(-t);
        let e_md = delta.neg().exp();
        let mut pw = Dd::ONE;
        let mut fact = Dd::ONE;
        let mut sum = Dd::ONE;
        for q in 1..=n {
            pw = pw.mul(e_md);
            if q >= 2 {
                fact = fact.mul_f64((q - 1) as f64);
            }
            let base = delta.mul_f64(q as f64).add(y);
            let p1 = base.powi((q - 1) as u32);
            let p2 = y.div_f64(q as f64).add(delta).add_f64(-1.0);
            sum = sum.add(pw.div(fact).mul(p1).mul(p2));
        }
        LogVal::from_f64(sum.to_f64())
    }

    /// Partial sum via the generating identity: sum_{q<=n} S_q(t) equals a
    /// closed form (zero for delta <= 1) minus the tail sum_{q>n} S_q(t).
    fn bracket_tail(&self, n: usize, t: f64) -> Result<LogVal> {
        let delta = self.delta;
        let ds = self.delta_star;
        let closed = if delta > 1.0 {
            LogVal::new(
                1.0,
                -ds * t + (-(ds - delta).exp_m1()).ln() - (1.0 - ds).ln(),
            )
        } else {
            LogVal::ZERO
        };
        let inv_delta = 1.0 / delta;
        let tail = self.tail_sum(n, |q, ln_zq_over_fact| {
            let r = q as f64 - t;
            if r <= 0.0 {
                return LogVal::ZERO;
            }
            let f2 = q as f64 * (1.0 - inv_delta) - t;
            if f2 == 0.0 {
                return LogVal::ZERO;
            }
            LogVal::new(
                f2.signum(),
                ln_zq_over_fact + (q as f64 - 1.0) * r.ln() + f2.abs().ln(),
            )
        })?;
        Ok(closed.add(tail.neg()))
    }

    /// Normalizing coefficient of the stripe spanning t in [t_lo, t_hi]
    /// (its mass divided by the atom), summing q = 0..=q_max.
    fn stripe_coeff(&self, t_lo: f64, t_hi: f64, q_max: usize) -> Result<LogVal> {
        // unlike the density bracket, this carries an e^{delta t} factor
        // that can overflow the direct route at extreme delta
        if self.delta * t_hi > 600.0 && (self.delta - 1.0).abs() >= 0.05 {
            return self.coeff_tail(t_lo, t_hi, q_max);
        }
        match self.path(q_max)? {
            EvalPath::DoubleDouble => Ok(self.coeff_dd(t_lo, t_hi, q_max)),
            EvalPath::Tail => self.coeff_tail(t_lo, t_hi, q_max),
        }
    }

    fn coeff_dd(&self, t_lo: f64, t_hi: f64, q_max: usize) -> LogVal {
        let delta = Dd::from_f64(self.lambda).mul(Dd::from_f64(self.m));
        let e_hi = delta.mul_f64(t_hi).exp();
        let e_lo = delta.mul_f64(t_lo).exp();
        let z = delta.mul(delta.neg().exp());
        let mut zq = Dd::ONE;
        let mut fact = Dd::ONE;
        let mut sum = Dd::ZERO;
        for q in 0..=q_max {
            if q >= 1 {
                zq = zq.mul(z);
                fact = fact.mul_f64(q as f64);
            }
            let a = Dd::from_f64(q as f64 - t_hi).powi(q as u32).mul(e_hi);
            let b = Dd::from_f64(q as f64 - t_lo).powi(q as u32).mul(e_lo);
            sum = sum.add(zq.div(fact).mul(a.sub(b)));
        }
        LogVal::from_f64(sum.to_f64())
    }

    fn coeff_tail(&self, t_lo: f64, t_hi: f64, q_max: usize) -> Result<LogVal> {
        let delta = self.delta;
        let ds = self.delta_star;
        let rate = delta - ds; // 0 for delta <= 1
        let closed = if rate > 0.0 {
            // ln(e^{r t_hi} - e^{r t_lo}) without forming either exponential
            LogVal::new(
                1.0,
                rate * t_hi + (-(-rate * (t_hi - t_lo)).exp_m1()).ln() - (1.0 - ds).ln(),
            )
        } else {
            LogVal::ZERO
        };
        let d_hi = delta * t_hi;
        let d_lo = delta * t_lo;
        let tail = self.tail_sum(q_max, |q, ln_zq_over_fact| {
            let qf = q as f64;
            let a = if qf > t_hi {
                LogVal::new(1.0, d_hi + qf * (qf - t_hi).ln())
            } else {
                LogVal::ZERO
            };
            let b = if qf > t_lo {
                LogVal::new(1.0, d_lo + qf * (qf - t_lo).ln())
            } else {
                LogVal::ZERO
            };
            let diff = a.add(b.neg());
            LogVal::new(diff.sign, diff.ln + ln_zq_over_fact)
        })?;
        Ok(closed.add(tail.neg()))
    }

    /// Accumulate sum_{q > q_max} term(q, ln(z^q / q!)) until the terms
    /// have passed their interior peak and fallen 50 e-folds below it.
    fn tail_sum(&self, q_max: usize, term: impl Fn(usize, f64) -> LogVal) -> Result<LogVal> {
        let mut ln_fact = lgamma((q_max + 2) as f64);
        let mut sum = LogVal::ZERO;
        let mut max_ln = f64::NEG_INFINITY;
        let mut last_ln = f64::NEG_INFINITY;
        let mut decaying = 0u32;
        let mut q = q_max + 1;
        loop {
            let t = term(q, q as f64 * self.ln_z - ln_fact);
            if t.sign != 0.0 {
                sum = sum.add(t);
                max_ln = max_ln.max(t.ln);
                decaying = if t.ln < last_ln { decaying + 1 } else { 0 };
                last_ln = t.ln;
                if decaying >= 3 && t.ln < max_ln - 50.0 {
                    return Ok(sum);
                }
            }
            q += 1;
            if q - q_max > TAIL_MAX_ITER {
                return Err(Error::Numeric(
                    "stripe tail sum did not settle within the iteration budget".into(),
                ));
            }
            // running log-factorial, resynced periodically against drift
            if (q - q_max).is_multiple_of(4096) {
                ln_fact = lgamma((q + 1) as f64);
            } else {
                ln_fact += (q as f64).ln();
            }
        }
    }

    /// ln of the stripe-n density at x (one-sided continuation at the
    /// stripe edges).
    fn ln_density(&self, n: usize, x: f64) -> Result<f64> {
        let t = ((self.k - x) / self.m).clamp(n as f64 - 1e-9, (n + 1) as f64 + 1e-9);
        let br = self.bracket(n, t)?;
        if br.sign <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.ln_pi + self.lambda.ln() + self.delta * t + br.ln)
    }
}

fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

// ---------------------------------------------------------------------------
// distribution container
// ---------------------------------------------------------------------------

/// Support of a limiting distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    HalfLine,
    Interval { k: f64 },
}

enum SegmentKind {
    /// exp(ln_coeff + rate * x)
    LogExponential { ln_coeff: f64, rate: f64 },
    /// Exact stripe-law section, rescaled by exp(ln_scale).
    Stripe {
        family: Arc<StripeFamily>,
        n: usize,
        ln_scale: f64,
    },
    /// Piecewise-linear interpolation of collocation values.
    Grid { xs: Vec<f64>, ys: Vec<f64> },
}

/// One density section on `[lo, hi)`.
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    kind: SegmentKind,
}

impl Segment {
    /// Evaluate this section's own formula at `x`; at the edges this is the
    /// one-sided limit (sections may jump at the stripe boundaries).
    pub fn density_at(&self, x: f64) -> f64 {
        match &self.kind {
            SegmentKind::LogExponential { ln_coeff, rate } => (ln_coeff + rate * x).exp(),
            SegmentKind::Stripe {
                family,
                n,
                ln_scale,
            } => family
                .ln_density(*n, x)
                .map(|ln| (ln + ln_scale).exp())
                .unwrap_or(f64::NAN),
            SegmentKind::Grid { xs, ys } => interp(xs, ys, x),
        }
    }

    fn mass(&self) -> Result<f64> {
        match &self.kind {
            SegmentKind::LogExponential { ln_coeff, rate } => {
                let width = self.hi - self.lo;
                if rate.abs() * width < 1e-9 {
                    Ok((ln_coeff + rate * 0.5 * (self.lo + self.hi)).exp() * width)
                } else {
                    Ok(
                        ((ln_coeff + rate * self.hi).exp() - (ln_coeff + rate * self.lo).exp())
                            / rate,
                    )
                }
            }
            SegmentKind::Stripe { .. } => {
                quad::integrate(|x| self.density_at(x), self.lo, self.hi, 1e-12)
            }
            SegmentKind::Grid { xs, ys } => {
                // trapezoid on the nodes plus flat end caps
                let mut m = ys[0] * (xs[0] - self.lo).max(0.0);
                for i in 1..xs.len() {
                    m += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
                }
                m += ys[ys.len() - 1] * (self.hi - xs[xs.len() - 1]).max(0.0);
                Ok(m)
            }
        }
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// A limiting law of the buffer content: piecewise density plus an atom at
/// the capacity (zero for unbounded buffers).
pub struct LimitingDistribution {
    support: Support,
    segments: Vec<Segment>,
    atom_at_k: f64,
}

impl LimitingDistribution {
    pub fn support(&self) -> Support {
        self.support
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Probability mass at exactly K.
    pub fn atom(&self) -> f64 {
        self.atom_at_k
    }

    /// Density at `x` (zero outside the support; the atom is not part of
    /// the density).
    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if let Support::Interval { k } = self.support {
            if x >= k {
                return 0.0;
            }
        }
        let i = self.segments.partition_point(|s| s.hi <= x);
        if i >= self.segments.len() || x < self.segments[i].lo {
            return 0.0;
        }
        self.segments[i].density_at(x)
    }

    /// Total mass: integrated density plus the atom.
    pub fn mass(&self) -> Result<f64> {
        let mut m = self.atom_at_k;
        for s in &self.segments {
            m += s.mass()?;
        }
        Ok(m)
    }

    /// Integrate `weight(x) * density(x)` over `[a, b]`, splitting at the
    /// section boundaries.
    pub fn integrate_weighted(
        &self,
        a: f64,
        b: f64,
        tol: f64,
        weight: impl Fn(f64) -> f64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.segments {
            let lo = s.lo.max(a);
            let hi = s.hi.min(b);
            if hi > lo {
                total += quad::integrate(|x| weight(x) * s.density_at(x), lo, hi, tol)?;
            }
        }
        Ok(total)
    }

    /// Wrap an externally supplied density given on a grid over `[0, K]`
    /// with an atom at K.
    pub fn from_grid(
        k: f64,
        xs: Vec<f64>,
        ys: Vec<f64>,
        atom: f64,
    ) -> Result<LimitingDistribution> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Param(
                "from_grid: need matching xs/ys with at least 2 nodes".into(),
            ));
        }
        if !xs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Param(
                "from_grid: xs must be strictly increasing".into(),
            ));
        }
        if ys.iter().any(|&y| y < 0.0) || !(0.0..=1.0).contains(&atom) {
            return Err(Error::Param(
                "from_grid: density/atom must be nonnegative".into(),
            ));
        }
        Ok(LimitingDistribution {
            support: Support::Interval { k },
            segments: vec![Segment {
                lo: 0.0,
                hi: k,
                kind: SegmentKind::Grid { xs, ys },
            }],
            atom_at_k: atom,
        })
    }
}

// ---------------------------------------------------------------------------
// constructors
// ---------------------------------------------------------------------------

/// Exact law for an unbounded buffer with exponential harvest and
/// `delta > 1`: `g(x) = -p e^{p x}` on the half line.
pub fn infinite_exact(lambda: f64, m: f64) -> Result<LimitingDistribution> {
    let p = infinite_decay_rate(lambda, m)?;
    Ok(LimitingDistribution {
        support: Support::HalfLine,
        segments: vec![Segment {
            lo: 0.0,
            hi: f64::INFINITY,
            kind: SegmentKind::LogExponential {
                ln_coeff: (-p).ln(),
                rate: p,
            },
        }],
        atom_at_k: 0.0,
    })
}

/// Exact finite-buffer law for exponential harvest: stripe-wise density
/// plus the full-buffer atom. Valid for any `delta > 0`.
///
/// A quadrature mass check guards the compensated stripe sums; parameter
/// ranges whose cancellation exceeds the extended-precision headroom report
/// a numeric-instability error instead of returning a bad density.
pub fn finite_exact(lambda: f64, m: f64, k: f64) -> Result<LimitingDistribution> {
    let family = StripeFamily::new(lambda, m, k)?;
    let mut segments = Vec::with_capacity(family.l_prime + 1);
    for n in (0..=family.l_prime).rev() {
        let (lo, hi) = family.stripe_bounds(n);
        segments.push(Segment {
            lo,
            hi,
            kind: SegmentKind::Stripe {
                family: Arc::clone(&family),
                n,
                ln_scale: 0.0,
            },
        });
    }
    let dist = LimitingDistribution {
        support: Support::Interval { k },
        segments,
        atom_at_k: family.pi(),
    };
    let mass = dist.mass()?;
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::Numeric(format!(
            "finite-buffer law failed the unit-mass check (mass = {mass}); \
             K/M = {} is outside the stable evaluation range for this delta",
            family.u
        )));
    }
    Ok(dist)
}

/// Parameters of the exponential-type approximation `c e^{d x}` and its
/// bookkeeping sums.
#[derive(Debug, Clone, Copy)]
pub struct ApproxParams {
    /// Density scale at x = 0 (may underflow to 0 for extreme parameters;
    /// `ln_c_over_lambda` stays meaningful).
    pub c: f64,
    /// Density exponent; sign(d) = sign(1 - delta).
    pub d: f64,
    /// Harvest rate the parameters were built for.
    pub lambda: f64,
    /// Approximate full-buffer probability.
    pub pi_k: f64,
    /// Cutover section index: sections n < n_c keep their exact shape.
    pub n_c: usize,
    /// Internal sums (f64 images; may overflow for extreme parameters).
    pub sigma1: f64,
    pub sigma2: f64,
    /// ln of c / lambda = P(transmit below the desired power).
    pub ln_c_over_lambda: f64,
    /// False when K < 3M or n_c < 2, where the approximation is loose.
    pub tight: bool,
}

impl ApproxParams {
    /// c / lambda: stationary probability of transmitting below the
    /// desired power.
    pub fn c_over_lambda(&self) -> f64 {
        self.ln_c_over_lambda.exp()
    }

    /// d / lambda: exponent over the mean-normalized buffer level.
    pub fn d_over_lambda(&self) -> f64 {
        self.d / self.lambda
    }

    /// Stationary probability of transmitting at the full desired power.
    pub fn p_full_power(&self) -> f64 {
        1.0 - self.c_over_lambda()
    }

    /// Parameters recovering the exact unbounded-buffer law (`delta > 1`)
    /// by the substitution c = -p, d = p.
    pub fn from_infinite(lambda: f64, m: f64) -> Result<ApproxParams> {
        let p = infinite_decay_rate(lambda, m)?;
        Ok(ApproxParams {
            c: -p,
            d: p,
            lambda,
            pi_k: 0.0,
            n_c: 0,
            sigma1: f64::NAN,
            sigma2: f64::NAN,
            ln_c_over_lambda: (-p / lambda).ln(),
            tight: true,
        })
    }
}

/// Exponential-type approximation of the finite-buffer law: `c e^{d x}` on
/// `[0, K - n_c M)` and the exact stripe shapes, rescaled to the
/// approximate atom, above the cutover. Unit mass by construction. Tight
/// for `K >= 3M` and `n_c >= 2`; looser ranges are flagged, not rejected.
pub fn finite_approx(
    lambda: f64,
    m: f64,
    k: f64,
    n_c: usize,
) -> Result<(ApproxParams, LimitingDistribution)> {
    let family = StripeFamily::new(lambda, m, k)?;
    if !(1..=16).contains(&n_c) {
        return Err(Error::Param(format!("n_c must be in 1..=16, got {n_c}")));
    }
    if n_c > family.l_prime + 1 {
        return Err(Error::Param(format!(
            "n_c = {n_c} exceeds the {} available sections (K/M = {})",
            family.l_prime + 1,
            family.u
        )));
    }
    let d = approx_decay_rate(lambda, m)?;
    // Sigma1 = e^{lambda K} * bracket(l', t = K/M) = g(0) / (pi(K) lambda)
    let br0 = family.bracket(family.l_prime, family.u)?;
    if br0.sign <= 0.0 {
        return Err(Error::Numeric(
            "approximation scale: stripe sum at x = 0 came out non-positive".into(),
        ));
    }
    let ln_sigma1 = lambda * k + br0.ln;
    // coefficients of the preserved sections
    let mut c_sum = 0.0;
    for n in 0..n_c {
        c_sum += family.stripe_coeff(n as f64, (n + 1) as f64, n)?.value();
    }
    let span = (k - n_c as f64 * m).max(0.0);
    // Sigma2 / Sigma1: integral of e^{dx} over the approximated span
    let ln_b = if span == 0.0 {
        f64::NEG_INFINITY
    } else if d == 0.0 {
        (lambda * span).ln()
    } else if d * span > 500.0 {
        d * span + (lambda / d).ln()
    } else {
        // (lambda/d)(e^{d s} - 1) is positive in both regimes
        (lambda / d * (d * span).exp_m1()).abs().ln()
    };
    let ln_a = c_sum.ln_1p() - ln_sigma1;
    let ln_c_over_lambda = -logaddexp(ln_a, ln_b);
    let ln_pi_approx = ln_c_over_lambda - ln_sigma1;
    let params = ApproxParams {
        c: lambda * ln_c_over_lambda.exp(),
        d,
        lambda,
        pi_k: ln_pi_approx.exp(),
        n_c,
        sigma1: ln_sigma1.exp(),
        sigma2: (ln_b + ln_sigma1).exp(),
        ln_c_over_lambda,
        tight: k >= 3.0 * m * (1.0 - 1e-12) && n_c >= 2,
    };
    let mut segments = Vec::with_capacity(n_c + 1);
    if span > 0.0 {
        segments.push(Segment {
            lo: 0.0,
            hi: span,
            kind: SegmentKind::LogExponential {
                ln_coeff: lambda.ln() + ln_c_over_lambda,
                rate: d,
            },
        });
    }
    let ln_scale = ln_pi_approx - family.ln_pi;
    for n in (0..n_c).rev() {
        let (lo, hi) = family.stripe_bounds(n);
        segments.push(Segment {
            lo,
            hi,
            kind: SegmentKind::Stripe {
                family: Arc::clone(&family),
                n,
                ln_scale,
            },
        });
    }
    let dist = LimitingDistribution {
        support: Support::Interval { k },
        segments,
        atom_at_k: params.pi_k,
    };
    Ok((params, dist))
}

/// Pointwise approximation error on the lowest stripe.
#[derive(Debug, Clone, Copy)]
pub struct ApproxErrorPoint {
    pub x: f64,
    /// Error from the closed-form expansion (exact minus approximate).
    pub err: f64,
    /// The same error by direct subtraction of the two densities.
    pub err_direct: f64,
    /// `err` relative to the exact density.
    pub rel: f64,
}

/// Approximation error `e(x) = g_{l-1}(x) - c e^{d x}` on `[0, M]`,
/// evaluated both through its closed-form expansion (stripe sums at x and
/// at 0, the Lambert exponent, and the normalization ratio) and by direct
/// subtraction of the densities. Requires K to be an integer multiple of M.
pub fn approx_error_profile(
    lambda: f64,
    m: f64,
    k: f64,
    n_c: usize,
    xs: &[f64],
) -> Result<Vec<ApproxErrorPoint>> {
    let u = k / m;
    if (u - u.round()).abs() > GRID_SNAP * u.max(1.0) || u.round() < 1.0 {
        return Err(Error::Param(format!(
            "error profile requires K to be an integer multiple of M (K/M = {u})"
        )));
    }
    let family = StripeFamily::new(lambda, m, k)?;
    let (params, _) = finite_approx(lambda, m, k, n_c)?;
    let n_last = family.l_prime; // = l - 1 here
    let w_branch = -(family.delta + params.d * m); // W_j(-delta e^{-delta})
    let br0 = family.bracket(n_last, family.u)?;
    let pi_ratio = (params.pi_k.ln() - family.ln_pi).exp();
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        if !(0.0..=m * (1.0 + 1e-12)).contains(&x) {
            return Err(Error::Param(format!(
                "error profile point {x} outside [0, M]"
            )));
        }
        let t = (k - x) / m;
        let br_x = family.bracket(n_last, t)?;
        // pi(K) * A(x) with A(x) = lambda e^{-lambda(x-K)}
        let ln_pi_a = family.ln_pi + lambda.ln() + family.delta * t;
        let expansion =
            ln_pi_a.exp() * (br_x.value() - br0.value() * (-w_branch * x / m).exp() * pi_ratio);
        let g_exact = family.ln_density(n_last, x)?.exp();
        let g_tilde = (lambda.ln() + params.ln_c_over_lambda + params.d * x).exp();
        out.push(ApproxErrorPoint {
            x,
            err: expansion,
            err_direct: g_exact - g_tilde,
            rel: expansion / g_exact,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// stationarity residuals and the collocation oracle
// ---------------------------------------------------------------------------

/// Maximum absolute residual of the stationarity integral equations over
/// the grid: the half-line balance equation for unbounded support, or the
/// finite-buffer pair plus the atom equation for interval support.
pub fn integral_residual(
    dist: &LimitingDistribution,
    harvest: &HarvestModel,
    m: f64,
    grid: &[f64],
) -> Result<f64> {
    let tol = 1e-12;
    let i_m = dist.integrate_weighted(0.0, m, tol, |_| 1.0)?;
    let mut worst: f64 = 0.0;
    match dist.support() {
        Support::HalfLine => {
            for &x in grid {
                let kernel = dist.integrate_weighted(m, m + x, tol, |u| harvest.pdf(x - u + m))?;
                let rhs = harvest.pdf(x) * i_m + kernel;
                worst = worst.max((dist.density(x) - rhs).abs());
            }
        }
        Support::Interval { k } => {
            for &x in grid {
                if !(0.0..k).contains(&x) {
                    return Err(Error::Param(format!(
                        "residual grid point {x} outside [0, K)"
                    )));
                }
                let upper = (m + x).min(k);
                let kernel = dist.integrate_weighted(m, upper, tol, |u| harvest.pdf(x - u + m))?;
                let mut rhs = harvest.pdf(x) * i_m + kernel;
                if x >= k - m {
                    rhs += dist.atom() * harvest.pdf(x - k + m);
                }
                worst = worst.max((dist.density(x) - rhs).abs());
            }
            // atom balance
            let kernel = dist.integrate_weighted(m, k, tol, |u| harvest.ccdf(k - u + m))?;
            let rhs = (harvest.ccdf(k) * i_m + kernel) / (1.0 - harvest.ccdf(m));
            worst = worst.max((dist.atom() - rhs).abs());
        }
    }
    Ok(worst)
}

/// Solve the finite-buffer stationarity equations by midpoint collocation
/// with cells aligned to the stripe break points, the atom as one extra
/// unknown, and the unit-mass condition replacing the collocation row
/// nearest the capacity. Serves as an oracle for arbitrary i.i.d. harvest
/// distributions with an infinite positive tail.
pub fn solve_integral_equation(
    harvest: &HarvestModel,
    m: f64,
    k: f64,
    n_grid: usize,
) -> Result<LimitingDistribution> {
    if !(k > 0.0 && k.is_finite() && m > 0.0) {
        return Err(Error::Param("need finite K > 0 and M > 0".into()));
    }
    if !(50..=4000).contains(&n_grid) {
        return Err(Error::Param(format!(
            "n_grid must be in 50..=4000, got {n_grid}"
        )));
    }
    if harvest.ccdf(k + m) <= 0.0 {
        return Err(Error::Param(
            "harvest distribution must have an infinite positive tail".into(),
        ));
    }
    // cell edges aligned with the stripe break points
    let mut bps: Vec<f64> = vec![0.0, k];
    let mut j = 1;
    while k - j as f64 * m > 1e-12 * k {
        bps.push(k - j as f64 * m);
        j += 1;
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bps.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * k);
    let h_target = k / n_grid as f64;
    let mut edges: Vec<f64> = Vec::with_capacity(n_grid + bps.len() + 1);
    for w in bps.windows(2) {
        let cells = ((w[1] - w[0]) / h_target).ceil().max(1.0) as usize;
        for c in 0..cells {
            edges.push(w[0] + (w[1] - w[0]) * c as f64 / cells as f64);
        }
    }
    edges.push(k);
    let n = edges.len() - 1;
    let mid: Vec<f64> = (0..n).map(|i| 0.5 * (edges[i] + edges[i + 1])).collect();
    let width: Vec<f64> = (0..n).map(|i| edges[i + 1] - edges[i]).collect();
    // weights of int_0^M g(u) du (overlap of each cell with [0, M])
    let w_m: Vec<f64> = (0..n)
        .map(|i| (edges[i + 1].min(m) - edges[i].min(m)).max(0.0))
        .collect();

    let size = n + 1;
    let mut a = nalgebra::DMatrix::<f64>::zeros(size, size);
    let mut rhs = nalgebra::DVector::<f64>::zeros(size);
    for jrow in 0..n {
        let x = mid[jrow];
        a[(jrow, jrow)] += 1.0;
        for i in 0..n {
            // exact harvest mass of the kernel over the part of cell i above M
            let lo = edges[i].max(m);
            let hi = edges[i + 1].max(m);
            let kernel = if hi > lo {
                harvest.ccdf(x + m - hi) - harvest.ccdf(x + m - lo)
            } else {
                0.0
            };
            a[(jrow, i)] -= harvest.pdf(x) * w_m[i] + kernel;
        }
        a[(jrow, n)] -= harvest.pdf(x - k + m);
    }
    // atom balance row
    for i in 0..n {
        let above = (edges[i + 1] - edges[i].max(m)).max(0.0);
        a[(n, i)] = -(harvest.ccdf(k) * w_m[i] + harvest.ccdf(k - mid[i] + m) * above);
    }
    a[(n, n)] = 1.0 - harvest.ccdf(m);
    // unit-mass row
    let mass_row = n - 1;
    for i in 0..n {
        a[(mass_row, i)] = width[i];
    }
    a[(mass_row, n)] = 1.0;
    rhs[mass_row] = 1.0;

    let sol = a.lu().solve(&rhs).ok_or_else(|| {
        Error::Singular("collocation system is singular; try a finer grid".into())
    })?;
    let atom = sol[n];
    if !(-1e-6..=1.0 + 1e-6).contains(&atom) {
        return Err(Error::Singular(format!(
            "collocation atom {atom} outside [0, 1]; try a finer grid"
        )));
    }
    let atom = atom.clamp(0.0, 1.0);
    // assemble per-stripe grid segments
    let mut segments = Vec::new();
    let mut start = 0usize;
    for w in bps.windows(2) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut i = start;
        while i < n && mid[i] < w[1] {
            xs.push(mid[i]);
            ys.push(sol[i].max(0.0));
            i += 1;
        }
        start = i;
        if xs.len() >= 2 {
            segments.push(Segment {
                lo: w[0],
                hi: w[1],
                kind: SegmentKind::Grid { xs, ys },
            });
        } else if let (Some(&x0), Some(&y0)) = (xs.first(), ys.first()) {
            segments.push(Segment {
                lo: w[0],
                hi: w[1],
                kind: SegmentKind::Grid {
                    xs: vec![w[0], x0, w[1]],
                    ys: vec![y0, y0, y0],
                },
            });
        }
    }
    let dist = LimitingDistribution {
        support: Support::Interval { k },
        segments,
        atom_at_k: atom,
    };
    let mass = dist.mass()?;
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::Singular(format!(
            "collocation solution mass {mass} violates the unit-mass row; try a finer grid"
        )));
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent oracle: bracketed bisection for the nontrivial root of
    /// lambda e^{rM} = lambda + r.
    fn fixed_point_oracle(lambda: f64, m: f64, lo: f64, hi: f64) -> f64 {
        let g = |r: f64| lambda * (r * m).exp() - lambda - r;
        let (mut lo, mut hi) = (lo, hi);
        assert!(g(lo) * g(hi) < 0.0, "oracle bracket invalid");
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
    fn infinite_rate_against_root_oracle() {
        // delta = 2: p in (-lambda, 0)
        let p = infinite_decay_rate(1.0, 2.0).unwrap();
        let oracle = fixed_point_oracle(1.0, 2.0, -0.999, -1e-6);
        assert_relative_eq!(p, oracle, max_relative = 1e-11);
        assert!((p - (-0.7968)).abs() < 1e-4);
        // identity residual
        assert!((1.0f64 * (p * 2.0).exp() - 1.0 - p).abs() < 1e-12);
    }

    #[test]
    fn infinite_rate_approaches_zero_at_regime_edge() {
        let p = infinite_decay_rate(1.0, 1.0 + 1e-6).unwrap();
        assert!(p < 0.0 && p.abs() < 1e-5);
    }

    #[test]
    fn infinite_rate_regime_errors() {
        assert!(matches!(
            infinite_decay_rate(1.0, 0.8),
            Err(Error::Regime(_))
        ));
        assert!(matches!(
            infinite_decay_rate(1.0, 1.0),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn approx_rate_examples() {
        // delta = 1 -> d = 0 exactly
        assert_eq!(approx_decay_rate(1.0, 1.0).unwrap(), 0.0);
        // delta = 2 -> same fixed point as the unbounded law
        let d = approx_decay_rate(1.0, 2.0).unwrap();
        let p = infinite_decay_rate(1.0, 2.0).unwrap();
        assert_relative_eq!(d, p, max_relative = 1e-13);
        // delta = 0.5 -> positive root from branch -1
        let d = approx_decay_rate(1.0, 0.5).unwrap();
        let oracle = fixed_point_oracle(1.0, 0.5, 1e-6, 50.0);
        assert_relative_eq!(d, oracle, max_relative = 1e-11);
        assert!((d - 2.512).abs() < 1e-3);
        assert!(((0.5 * d).exp() - (1.0 + d)).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_identity_sweep() {
        for &delta in &[0.2, 0.5, 0.8, 1.0, 1.2, 2.0, 3.0] {
            let d = approx_decay_rate(1.0, delta).unwrap();
            let resid = ((d * delta).exp() - 1.0 - d).abs();
            assert!(resid < 1e-10, "delta={delta} d={d} resid={resid:.2e}");
            assert_eq!(d > 0.0, delta < 1.0, "sign(d) must match sign(1-delta)");
            if delta == 1.0 {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn infinite_exact_mass_and_density() {
        let dist = infinite_exact(1.0, 2.0).unwrap();
        assert_eq!(dist.atom(), 0.0);
        let p = infinite_decay_rate(1.0, 2.0).unwrap();
        assert_relative_eq!(dist.density(0.0), -p, max_relative = 1e-12);
        let mass = dist.integrate_weighted(0.0, 200.0, 1e-12, |_| 1.0).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
        assert!(infinite_exact(1.0, 0.9).is_err());
    }

    #[test]
    fn top_stripe_is_pure_exponential() {
        // on [K-M, K) the law is pi(K) lambda e^{-lambda(x-K)}
        let (lambda, m, k) = (1.0, 1.3, 4.0 * 1.3);
        let dist = finite_exact(lambda, m, k).unwrap();
        let pi = dist.atom();
        for &x in &[k - m, k - 0.7 * m, k - 1e-9] {
            let expected = pi * lambda * (-lambda * (x - k)).exp();
            assert_relative_eq!(dist.density(x), expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn capacity_below_threshold_reduces_to_clipped_harvest() {
        // K <= M: next level is min(X, K), so the atom is e^{-lambda K}
        let dist = finite_exact(2.0, 3.0, 0.8).unwrap();
        assert_relative_eq!(dist.atom(), (-2.0f64 * 0.8).exp(), max_relative = 1e-10);
        assert_relative_eq!(
            dist.density(0.5),
            2.0 * (-2.0f64 * 0.5).exp(),
            max_relative = 1e-9
        );
        let mass = dist.mass().unwrap();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_exact_unit_mass_across_regimes() {
        for &(lambda, m, ko) in &[
            (1.0, 0.5, 3.0),
            (1.0, 1.0, 4.0),
            (1.0, 2.0, 7.0),
            (0.7, 1.9, 5.5), // non-integer K/M
            (1.0, 1.0, 20.0),
            (2.0, 1.5, 2.5),
        ] {
            let k = ko * m;
            let dist = finite_exact(lambda, m, k).unwrap();
            let mass = dist.mass().unwrap();
            assert!(
                (mass - 1.0).abs() < 1e-9,
                "lambda={lambda} m={m} K/M={ko}: mass={mass}"
            );
            assert!(dist.atom() > 0.0 && dist.atom() < 1.0);
        }
        // extreme drain ratios: the atom underflows but the density keeps
        // unit mass
        for &(lambda, m, ko) in &[(1.0, 100.0, 7.0), (1.0, 300.0, 7.0)] {
            let dist = finite_exact(lambda, m, ko * m).unwrap();
            assert!(dist.atom() < 1e-300);
            assert!((dist.mass().unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn atom_decreases_with_capacity() {
        let mut last = f64::INFINITY;
        for &ko in &[1.5, 2.0, 3.0, 4.0, 5.5, 7.0, 10.0] {
            let pi = finite_exact(1.0, 1.0, ko).unwrap().atom();
            assert!(pi < last, "pi(K) must fall with K: {pi} !< {last}");
            last = pi;
        }
    }

    #[test]
    fn bracket_routes_agree() {
        // double-double and generating-identity routes are independent;
        // compare them where both are valid
        for &delta in &[0.85, 0.9, 1.1, 1.2] {
            let fam = StripeFamily::new(1.0, delta, 36.0 * delta).unwrap();
            for &n in &[10usize, 20, 30] {
                for &frac in &[0.25, 0.75] {
                    let t = n as f64 + frac;
                    let dd = fam.bracket_dd(n, t).value();
                    let tail = fam.bracket_tail(n, t).unwrap().value();
                    let rel = ((dd - tail) / tail).abs();
                    assert!(
                        rel < 1e-9,
                        "delta={delta} n={n} t={t}: dd={dd:.12e} tail={tail:.12e} rel={rel:.2e}"
                    );
                }
            }
        }
    }

    #[test]
    fn coeff_routes_agree() {
        for &delta in &[0.85, 1.2] {
            let fam = StripeFamily::new(1.0, delta, 36.0 * delta).unwrap();
            for &n in &[12usize, 25] {
                let dd = fam.coeff_dd(n as f64, (n + 1) as f64, n).value();
                let tail = fam.coeff_tail(n as f64, (n + 1) as f64, n).unwrap().value();
                let rel = ((dd - tail) / tail).abs();
                assert!(rel < 1e-9, "delta={delta} n={n}: rel={rel:.2e}");
            }
        }
    }

    #[test]
    fn approx_params_basics() {
        let (params, dist) = finite_approx(1.0, 1.0, 4.0, 2).unwrap();
        assert_eq!(params.d, 0.0);
        assert!(params.pi_k > 0.0 && params.pi_k < 1.0);
        assert!(params.tight);
        let mass = dist.mass().unwrap();
        assert!((mass - 1.0).abs() < 1e-9, "mass={mass}");
        // looser regime is flagged, not rejected
        let (loose, _) = finite_approx(1.0, 2.0, 5.0, 2).unwrap();
        assert!(!loose.tight);
    }

    #[test]
    fn approx_matches_scratch_fixture() {
        // delta = 0.5, K = 4M: the approximation is tight; its atom must
        // stay within 0.1% of the exact one and its density scale near the
        // exact density at 0
        let (params, dist) = finite_approx(1.0, 0.5, 2.0, 2).unwrap();
        let exact = finite_exact(1.0, 0.5, 2.0).unwrap();
        assert!((params.pi_k - exact.atom()).abs() / exact.atom() < 1e-3);
        let rel = (dist.density(0.0) - exact.density(0.0)).abs() / exact.density(0.0);
        assert!(rel < 0.014, "rel={rel}");
        // P(full power) consistency: c/lambda integrates the density over [0, M]
        let p_below = exact.integrate_weighted(0.0, 0.5, 1e-12, |_| 1.0).unwrap();
        assert!((params.c_over_lambda() - p_below).abs() < 2e-3);
    }

    #[test]
    fn approx_extreme_parameters_underflow_gracefully() {
        // tiny delta with a huge capacity: P(below full power) vanishes
        let (params, _) = finite_approx(1.0, 0.1, 20.0, 2).unwrap();
        assert!(params.d > 0.0);
        assert!(params.ln_c_over_lambda < -400.0);
        assert!(params.c_over_lambda() < 1e-300);
        assert!(params.p_full_power() == 1.0);
        // atom for delta = 0.1, K = 200M: nearly always full; cross-check
        // against 1/(1 + C_0 + C_1), exact up to the vanishing Sigma2 term
        let delta: f64 = 0.1;
        let z = delta * (-delta).exp();
        let c0 = delta.exp() - 1.0;
        let c1 = delta.exp() * (delta.exp() - 1.0 + z * (-delta.exp() - 0.0));
        let expect = 1.0 / (1.0 + c0 + c1);
        assert_relative_eq!(params.pi_k, expect, max_relative = 1e-3);
        assert!(params.sigma2 < 1e-3);
    }

    #[test]
    fn error_profile_routes_agree_and_bound_holds() {
        let m = 0.5;
        let xs: Vec<f64> = (0..=100).map(|i| m * i as f64 / 100.0).collect();
        for &(ko, bound) in &[(3.0, 0.083), (4.0, 0.014)] {
            let pts = approx_error_profile(1.0, m, ko * m, 2, &xs).unwrap();
            let mut worst: f64 = 0.0;
            for p in &pts {
                assert!(
                    (p.err - p.err_direct).abs() <= 1e-9,
                    "expansion vs direct: {} vs {}",
                    p.err,
                    p.err_direct
                );
                worst = worst.max(p.rel.abs());
            }
            assert!(worst < bound, "K={ko}M: worst {worst} >= {bound}");
        }
        // K not a multiple of M is rejected
        assert!(approx_error_profile(1.0, 0.5, 1.7, 2, &xs).is_err());
    }

    #[test]
    fn residual_small_for_exact_laws() {
        let harvest = HarvestModel::exponential(1.0).unwrap();
        let grid: Vec<f64> = (0..=60).map(|i| 3.99 * i as f64 / 60.0).collect();
        let dist = finite_exact(1.0, 1.0, 4.0).unwrap();
        let r = integral_residual(&dist, &harvest, 1.0, &grid).unwrap();
        assert!(r < 1e-8, "finite residual {r}");
        let inf = infinite_exact(1.0, 2.0).unwrap();
        let grid: Vec<f64> = (0..=60).map(|i| 8.0 * i as f64 / 60.0).collect();
        let r = integral_residual(&inf, &harvest, 2.0, &grid).unwrap();
        assert!(r < 1e-10, "half-line residual {r}");
    }

    #[test]
    fn residual_rejects_wrong_density() {
        // negative control: uniform density with the matching atom
        let harvest = HarvestModel::exponential(1.0).unwrap();
        let (k, m) = (8.0, 2.0);
        let pi = finite_exact(1.0, m, k).unwrap().atom();
        let xs: Vec<f64> = (0..=50).map(|i| k * i as f64 / 50.0).collect();
        let ys = vec![(1.0 - pi) / k; 51];
        let uniform = LimitingDistribution::from_grid(k, xs, ys, pi).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| 7.99 * i as f64 / 40.0).collect();
        let r = integral_residual(&uniform, &harvest, m, &grid).unwrap();
        assert!(r > 1e-2, "negative control residual {r} too small");
    }

    #[test]
    fn collocation_matches_exact_law() {
        let harvest = HarvestModel::exponential(1.0).unwrap();
        let (m, k) = (1.0, 4.0);
        let oracle = solve_integral_equation(&harvest, m, k, 800).unwrap();
        let exact = finite_exact(1.0, m, k).unwrap();
        assert!((oracle.atom() - exact.atom()).abs() < 1e-4);
        let mut max_density: f64 = 0.0;
        let mut linf: f64 = 0.0;
        for i in 0..400 {
            let x = k * (i as f64 + 0.5) / 400.0;
            let ge = exact.density(x);
            max_density = max_density.max(ge);
            linf = linf.max((oracle.density(x) - ge).abs());
        }
        assert!(linf < 5e-3 * max_density, "Linf={linf} maxg={max_density}");
        let grid: Vec<f64> = (0..=40).map(|i| 3.99 * i as f64 / 40.0).collect();
        let r = integral_residual(&oracle, &harvest, m, &grid).unwrap();
        assert!(r < 10.0 / 800.0, "oracle residual {r}");
    }

    #[test]
    fn collocation_rejects_bad_inputs() {
        let harvest = HarvestModel::exponential(1.0).unwrap();
        assert!(solve_integral_equation(&harvest, 1.0, 4.0, 10).is_err());
        assert!(solve_integral_equation(&harvest, 1.0, f64::INFINITY, 500).is_err());
    }
}
