//! Monte Carlo simulation of the storage chain, its water-storage twin, and
//! the empirical statistics used as oracles for the analytical laws.
//!
//! Draws use an explicit inverse-CDF transform on ChaCha output so that a
//! given seed produces the identical trajectory on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::model::{Capacity, EffectiveSpec, HarvestModel, SystemSpec};

/// Power drawn for transmission: the desired level, or whatever the buffer
/// holds if it is short.
#[inline]
pub fn ul_power(b: f64, m: f64) -> f64 {
    b.min(m)
}

/// One slot of the storage recursion: drain up to `m`, add the harvest,
/// clip at capacity.
#[inline]
pub fn step(b: f64, x: f64, m: f64, k: f64) -> f64 {
    ((b - m).max(0.0) + x).min(k)
}

/// One slot of the dam recursion: inflow first, clip, then release. Returns
/// the next after-release level and the recorded before-release level
/// `min(z + x, k)`.
#[inline]
pub fn moran_step(z: f64, x: f64, m: f64, k: f64) -> (f64, f64) {
    let u = (z + x).min(k);
    ((u - m).max(0.0), u)
}

/// Run controls for a simulation.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub n_slots: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Buffer level at slot 0.
    pub initial: f64,
    /// Record every k-th post-burn-in level into `samples` (0 = none).
    /// Thinned samples are what the two-sample distribution tests consume.
    pub record_every: u32,
}

impl SimOptions {
    pub fn new(n_slots: u64, burn_in: u64, seed: u64, initial: f64) -> SimOptions {
        SimOptions {
            n_slots,
            burn_in,
            seed,
            initial,
            record_every: 0,
        }
    }

    fn validate(&self, k: f64) -> Result<()> {
        if self.n_slots <= self.burn_in {
            return Err(Error::Param(format!(
                "n_slots ({}) must exceed burn_in ({})",
                self.n_slots, self.burn_in
            )));
        }
        if !(self.initial >= 0.0 && self.initial <= k) {
            return Err(Error::Param(format!(
                "initial level {} outside [0, K]",
                self.initial
            )));
        }
        Ok(())
    }
}

/// Binned density estimate. Finite-capacity runs bin `[0, K)` (the atom at
/// K is kept out of the bins); unbounded runs bin `[0, 10 * mean)` with an
/// overflow counter beyond.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub overflow: u64,
    /// All recorded slots, including atom slots (so bin mass + overflow
    /// mass + atom mass sums to one).
    pub total: u64,
}

impl Histogram {
    pub const DEFAULT_BINS: usize = 1000;

    fn new(lo: f64, hi: f64, bins: usize) -> Histogram {
        Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            overflow: 0,
            total: 0,
        }
    }

    #[inline]
    fn record(&mut self, x: f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        let idx = ((x - self.lo) / w) as usize;
        if x >= self.hi || idx >= self.counts.len() {
            self.overflow += 1;
        } else {
            self.counts[idx] += 1;
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    /// Density estimate in bin `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.counts[i] as f64 / (self.total as f64 * self.bin_width())
    }

    /// Probability mass recorded in bin `i`.
    pub fn bin_mass(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.total as f64
    }

    pub fn overflow_mass(&self) -> f64 {
        self.overflow as f64 / self.total as f64
    }

    /// Mass covered by the bins plus overflow (excludes the atom).
    pub fn mass(&self) -> f64 {
        (self.counts.iter().sum::<u64>() + self.overflow) as f64 / self.total as f64
    }
}

/// Empirical outputs of one simulation run.
#[derive(Debug, Clone)]
pub struct TrajectoryStats {
    pub histogram: Histogram,
    /// Fraction of recorded slots with the buffer exactly full.
    pub atom_mass: f64,
    /// Fraction of recorded slots transmitting at the full desired power.
    pub p_m_hat: f64,
    /// Per-block mean level: (center slot index, mean over block).
    pub mean_series: Vec<(f64, f64)>,
    pub n_slots: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub capacity: Capacity,
    /// Thinned recorded levels when `record_every > 0`.
    pub samples: Vec<f64>,
}

const MEAN_BLOCKS: usize = 100;

struct StatsAccum {
    hist: Histogram,
    k: f64,
    atom: u64,
    full_power: u64,
    recorded: u64,
    block_len: u64,
    block_sum: f64,
    block_count: u64,
    first_slot: u64,
    mean_series: Vec<(f64, f64)>,
    record_every: u32,
    samples: Vec<f64>,
}

impl StatsAccum {
    fn new(spec_capacity: Capacity, mean: f64, opts: &SimOptions) -> StatsAccum {
        let (lo, hi) = match spec_capacity {
            Capacity::Finite(k) => (0.0, k),
            Capacity::Infinite => (0.0, 10.0 * mean),
        };
        let n_rec = opts.n_slots - opts.burn_in;
        StatsAccum {
            hist: Histogram::new(lo, hi, Histogram::DEFAULT_BINS),
            k: spec_capacity.as_f64(),
            atom: 0,
            full_power: 0,
            recorded: 0,
            block_len: (n_rec / MEAN_BLOCKS as u64).max(1),
            block_sum: 0.0,
            block_count: 0,
            first_slot: opts.burn_in,
            mean_series: Vec::with_capacity(MEAN_BLOCKS + 1),
            record_every: opts.record_every,
            samples: Vec::new(),
        }
    }

    #[inline]
    fn push(&mut self, level: f64, at_full_power: bool) {
        if level >= self.k {
            self.atom += 1;
        } else {
            self.hist.record(level);
        }
        if at_full_power {
            self.full_power += 1;
        }
        if self.record_every > 0 && self.recorded.is_multiple_of(self.record_every as u64) {
            self.samples.push(level);
        }
        self.block_sum += level;
        self.block_count += 1;
        if self.block_count == self.block_len {
            let end = self.first_slot + self.recorded + 1;
            let center = end as f64 - 0.5 * self.block_len as f64;
            self.mean_series
                .push((center, self.block_sum / self.block_len as f64));
            self.block_sum = 0.0;
            self.block_count = 0;
        }
        self.recorded += 1;
    }

    fn finish(mut self, opts: &SimOptions, capacity: Capacity) -> TrajectoryStats {
        self.hist.total = self.recorded;
        TrajectoryStats {
            histogram: self.hist,
            atom_mass: self.atom as f64 / self.recorded as f64,
            p_m_hat: self.full_power as f64 / self.recorded as f64,
            mean_series: self.mean_series,
            n_slots: opts.n_slots,
            burn_in: opts.burn_in,
            seed: opts.seed,
            capacity,
            samples: self.samples,
        }
    }
}

/// Uniform in [0, 1) from the top 53 bits of a ChaCha word.
#[inline]
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
}

#[inline]
fn draw(harvest: &HarvestModel, rng: &mut ChaCha8Rng) -> f64 {
    harvest.quantile(uniform(rng))
}

/// Simulate the storage recursion and collect statistics over the slots
/// after burn-in. Deterministic given the seed.
pub fn simulate(spec: &EffectiveSpec, opts: &SimOptions) -> Result<TrajectoryStats> {
    let k = spec.capacity.as_f64();
    opts.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut acc = StatsAccum::new(spec.capacity, spec.harvest.mean(), opts);
    let mut b = opts.initial;
    for slot in 0..opts.n_slots {
        if slot >= opts.burn_in {
            acc.push(b, b >= spec.m);
        }
        let x = draw(&spec.harvest, &mut rng);
        b = step(b, x, spec.m, k);
    }
    Ok(acc.finish(opts, spec.capacity))
}

/// Simulate the dam twin and record the before-release levels
/// `min(Z + X, K)`, which share the storage chain's law. The after-release
/// state starts at `[initial - M]^+` so the recorded process aligns with a
/// storage run started at `initial`.
pub fn simulate_moran(spec: &EffectiveSpec, opts: &SimOptions) -> Result<TrajectoryStats> {
    let k = spec.capacity.as_f64();
    opts.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut acc = StatsAccum::new(spec.capacity, spec.harvest.mean(), opts);
    let mut z = (opts.initial - spec.m).max(0.0);
    for slot in 0..opts.n_slots {
        let x = draw(&spec.harvest, &mut rng);
        let (z_next, recorded) = moran_step(z, x, spec.m, k);
        if slot >= opts.burn_in {
            acc.push(recorded, recorded >= spec.m);
        }
        z = z_next;
    }
    Ok(acc.finish(opts, spec.capacity))
}

/// Simulate the imperfect storage recursion directly (no ideal-equivalent
/// reduction): drain `P_C + alpha * P_UL`, bank `beta * X`, clip at K. When
/// the buffer cannot cover the constant drain the UL power clamps to zero
/// and the shortfall comes out of that slot's harvest.
pub fn simulate_imperfect(
    spec: &SystemSpec,
    harvest: &HarvestModel,
    opts: &SimOptions,
) -> Result<TrajectoryStats> {
    spec.validate()?;
    let k = spec.capacity.as_f64();
    opts.validate(k)?;
    let m_eff = spec.p_circuit_total() + spec.alpha * spec.m;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut acc = StatsAccum::new(spec.capacity, spec.beta * harvest.mean(), opts);
    let mut b = opts.initial;
    for slot in 0..opts.n_slots {
        if slot >= opts.burn_in {
            acc.push(b, b >= m_eff);
        }
        let x = draw(harvest, &mut rng);
        b = step(b, spec.beta * x, m_eff, k);
    }
    Ok(acc.finish(opts, spec.capacity))
}

/// Actual radiated UL power of the imperfect system at buffer level `b`.
pub fn ul_power_imperfect(b: f64, spec: &SystemSpec) -> f64 {
    (((b - spec.p_circuit_total()) / spec.alpha).max(0.0)).min(spec.m)
}

/// Least-squares slope of the per-block mean level against the slot index,
/// in energy per slot. Only meaningful for unbounded buffers, where it
/// estimates the accumulation rate (mean harvest minus mean drain).
pub fn mean_drift(stats: &TrajectoryStats) -> Result<f64> {
    if stats.capacity.is_finite() {
        return Err(Error::Param(
            "mean_drift: finite-capacity runs have no persistent drift".into(),
        ));
    }
    let n = stats.mean_series.len();
    if n < 2 {
        return Err(Error::Param("mean_drift: need at least two blocks".into()));
    }
    let mean_x = stats.mean_series.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_y = stats.mean_series.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &stats.mean_series {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    Ok(sxy / sxx)
}

/// Two-sample Kolmogorov-Smirnov statistic (sup distance between the
/// empirical CDFs).
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Critical value of the two-sample KS statistic at the 1% level:
/// c(0.01) * sqrt((n+m)/(n*m)) with c(0.01) = 1.628.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * (((n + m) as f64) / (n as f64 * m as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_spec(delta: f64, capacity: Capacity) -> EffectiveSpec {
        let h = HarvestModel::exponential(1.0).unwrap();
        EffectiveSpec::ideal(delta, capacity, h).unwrap()
    }

    #[test]
    fn policy_and_step_values() {
        assert_eq!(ul_power(3.0, 2.0), 2.0);
        assert_eq!(ul_power(1.0, 2.0), 1.0);
        assert_eq!(ul_power(0.0, 2.0), 0.0);
        assert_eq!(step(3.0, 1.0, 2.0, 10.0), 2.0);
        assert_eq!(step(1.0, 5.0, 2.0, 4.0), 4.0);
        assert_eq!(step(0.0, 0.0, 2.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn moran_decays_without_inflow() {
        // degenerate X = 0: the after-release level drains to zero and stays
        let mut z = 5.0;
        for _ in 0..10 {
            let (z_next, recorded) = moran_step(z, 0.0, 1.0, f64::INFINITY);
            assert!(recorded <= z + 1e-12);
            z = z_next;
        }
        assert_eq!(z, 0.0);
        let (z_next, _) = moran_step(z, 0.0, 1.0, f64::INFINITY);
        assert_eq!(z_next, 0.0);
    }

    #[test]
    fn seed_determinism() {
        let spec = exp_spec(1.0, Capacity::Finite(4.0));
        let mut opts = SimOptions::new(20_000, 100, 42, 2.0);
        opts.record_every = 7;
        let s1 = simulate(&spec, &opts).unwrap();
        let s2 = simulate(&spec, &opts).unwrap();
        assert_eq!(s1.histogram.counts, s2.histogram.counts);
        assert_eq!(s1.atom_mass, s2.atom_mass);
        assert_eq!(s1.p_m_hat, s2.p_m_hat);
        assert_eq!(s1.samples, s2.samples);
        assert_eq!(s1.mean_series, s2.mean_series);
    }

    #[test]
    fn state_containment_and_mass() {
        let spec = exp_spec(0.9, Capacity::Finite(3.6));
        let mut opts = SimOptions::new(50_000, 500, 7, 0.0);
        opts.record_every = 1;
        let s = simulate(&spec, &opts).unwrap();
        assert!(s.samples.iter().all(|&b| (0.0..=3.6).contains(&b)));
        let total = s.histogram.mass() + s.atom_mass;
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.atom_mass > 0.0);
    }

    #[test]
    fn drift_in_accumulating_regime() {
        // delta = 0.8: slope ~ mean - M = 0.2 per slot once at full power
        let spec = exp_spec(0.8, Capacity::Infinite);
        let opts = SimOptions::new(400_000, 4_000, 11, 0.0);
        let s = simulate(&spec, &opts).unwrap();
        let slope = mean_drift(&s).unwrap();
        assert!((slope - 0.2).abs() < 0.02, "slope={slope}");
        assert!(1.0 - s.p_m_hat < 1e-4);
    }

    #[test]
    fn drift_zero_when_stationary() {
        let spec = exp_spec(2.0, Capacity::Infinite);
        let opts = SimOptions::new(400_000, 4_000, 11, 0.0);
        let s = simulate(&spec, &opts).unwrap();
        let slope = mean_drift(&s).unwrap();
        assert!(slope.abs() < 1e-4, "slope={slope}");
    }

    #[test]
    fn drift_equals_mean_when_never_transmitting() {
        // M -> 0 proxy: tiny threshold, slope ~ mean harvest
        let h = HarvestModel::exponential(1.0).unwrap();
        let spec = EffectiveSpec::ideal(1e-12, Capacity::Infinite, h).unwrap();
        let opts = SimOptions::new(200_000, 1_000, 3, 0.0);
        let s = simulate(&spec, &opts).unwrap();
        let slope = mean_drift(&s).unwrap();
        assert!((slope - 1.0).abs() < 0.02, "slope={slope}");
    }

    #[test]
    fn drift_rejects_finite_runs() {
        let spec = exp_spec(1.0, Capacity::Finite(4.0));
        let s = simulate(&spec, &SimOptions::new(10_000, 100, 1, 0.0)).unwrap();
        assert!(mean_drift(&s).is_err());
    }

    #[test]
    fn moran_matches_storage_in_distribution() {
        for spec in [
            exp_spec(1.1, Capacity::Finite(4.4)),
            exp_spec(2.0, Capacity::Infinite),
        ] {
            let mut o1 = SimOptions::new(200_000, 2_000, 101, 2.0);
            o1.record_every = 25;
            let mut o2 = o1;
            o2.seed = 202;
            let s1 = simulate(&spec, &o1).unwrap();
            let s2 = simulate_moran(&spec, &o2).unwrap();
            let d = ks_statistic(&s1.samples, &s2.samples);
            let crit = ks_critical_1pct(s1.samples.len(), s2.samples.len());
            assert!(d < crit, "{:?}: KS {d} vs critical {crit}", spec.capacity);
        }
    }

    #[test]
    fn initial_condition_forgetting() {
        let spec = exp_spec(1.0, Capacity::Finite(4.0));
        let mut a = SimOptions::new(300_000, 3_000, 5, 0.0);
        a.record_every = 25;
        let mut b = a;
        b.initial = 4.0;
        b.seed = 6;
        let s1 = simulate(&spec, &a).unwrap();
        let s2 = simulate(&spec, &b).unwrap();
        let d = ks_statistic(&s1.samples, &s2.samples);
        let crit = ks_critical_1pct(s1.samples.len(), s2.samples.len());
        assert!(d < crit, "KS {d} vs {crit}");
    }

    #[test]
    fn imperfect_matches_reduced_in_distribution() {
        let spec = SystemSpec {
            alpha: 1.5,
            beta: 0.9,
            p_ct: 0.1,
            ..SystemSpec::ideal(1.0, Capacity::Finite(6.0))
        };
        let h = HarvestModel::exponential_with_mean(2.0).unwrap();
        let eff = crate::model::effective_spec(&spec, &h).unwrap();
        let mut o1 = SimOptions::new(300_000, 3_000, 31, 3.0);
        o1.record_every = 25;
        let mut o2 = o1;
        o2.seed = 32;
        let direct = simulate_imperfect(&spec, &h, &o1).unwrap();
        let reduced = simulate(&eff, &o2).unwrap();
        let d = ks_statistic(&direct.samples, &reduced.samples);
        let crit = ks_critical_1pct(direct.samples.len(), reduced.samples.len());
        assert!(d < crit, "KS {d} vs {crit}");
    }

    #[test]
    fn ks_statistic_sanity() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_statistic(&a, &b), 0.0);
        let c = [10.0, 11.0, 12.0, 13.0];
        assert_eq!(ks_statistic(&a, &c), 1.0);
    }
}
