//! Uplink performance over Rayleigh fading: average error rate and outage
//! probability in closed form and by semi-analytic Monte Carlo, with
//! diversity-order and power-tuning diagnostics.
//!
//! Closed forms are expressed in normalized coordinates: the buffer law
//! enters only through `delta = M/mean` and the capacity-to-mean ratio, and
//! the channel through `gamma_bar = omega_ul * mean / noise`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::dist::{self, ApproxParams};
use crate::error::{Error, Result};
use crate::model::{Capacity, EffectiveSpec, LinkModel};
use crate::quad;

/// Gaussian Q-function via the complementary error function.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Error rate of `a Q(sqrt(b gamma))` modulation averaged over a Rayleigh
/// channel at mean SNR `gamma_bar * delta` (transmit power fixed at M).
pub fn aer_infinite(a: f64, b: f64, gamma_bar: f64, delta: f64) -> f64 {
    let y = b * gamma_bar * delta;
    0.5 * a * (1.0 - (y / (2.0 + y)).sqrt())
}

/// Outage probability at full power: P(delta gamma_bar h < gamma_thr).
pub fn outage_infinite(gamma_thr: f64, gamma_bar: f64, delta: f64) -> f64 {
    -(-gamma_thr / (delta * gamma_bar)).exp_m1()
}

/// Average error rate for a buffer whose below-threshold law is
/// `c e^{d x}`: the full-power branch plus the finite-limits integral over
/// the normalized level.
pub fn aer_finite(
    a: f64,
    b: f64,
    gamma_bar: f64,
    delta: f64,
    c_over_lambda: f64,
    d_over_lambda: f64,
) -> Result<f64> {
    let full = (b * gamma_bar * delta / (2.0 + b * gamma_bar * delta)).sqrt();
    let integral = if c_over_lambda == 0.0 {
        0.0
    } else {
        quad::integrate(
            |x| (b * gamma_bar * x / (2.0 + b * gamma_bar * x)).sqrt() * (d_over_lambda * x).exp(),
            0.0,
            delta,
            1e-10,
        )
        .map_err(|e| {
            Error::Quadrature(format!(
                "error-rate integral on [0, {delta}] at gamma_bar = {gamma_bar}: {e}"
            ))
        })?
    };
    Ok(0.5 * a * (1.0 - (1.0 - c_over_lambda) * full - c_over_lambda * integral))
}

/// Outage probability for a buffer whose below-threshold law is
/// `c e^{d x}`. The integrand vanishes at x = 0 (the essential singularity
/// decays), so the closed interval is integrable.
pub fn outage_finite(
    gamma_thr: f64,
    gamma_bar: f64,
    delta: f64,
    c_over_lambda: f64,
    d_over_lambda: f64,
) -> Result<f64> {
    let full_ccdf = (-gamma_thr / (gamma_bar * delta)).exp();
    let integral = if c_over_lambda == 0.0 {
        0.0
    } else {
        quad::integrate(
            |x| {
                if x <= 0.0 {
                    0.0
                } else {
                    (-gamma_thr / (gamma_bar * x)).exp() * (d_over_lambda * x).exp()
                }
            },
            0.0,
            delta,
            1e-10,
        )
        .map_err(|e| {
            Error::Quadrature(format!(
                "outage integral on [0, {delta}] at gamma_bar = {gamma_bar}: {e}"
            ))
        })?
    };
    Ok((1.0 - full_ccdf) + c_over_lambda * (full_ccdf - integral))
}

/// High-SNR shape of the finite-buffer error rate. The `1/x` weight
/// diverges logarithmically at 0 as written, so the integral is cut off at
/// `eps` (default `delta * 1e-6`); diagnostic only -- diversity-order
/// checks use [`diversity_slope`] on the exact expressions.
pub fn aer_finite_asymptotic(
    a: f64,
    b: f64,
    gamma_bar: f64,
    delta: f64,
    c_over_lambda: f64,
    d_over_lambda: f64,
    eps: Option<f64>,
) -> Result<f64> {
    let eps = eps.unwrap_or(delta * 1e-6);
    let integral = quad::integrate(|x| (d_over_lambda * x).exp() / x, eps, delta, 1e-10)?;
    Ok(0.5 * a * c_over_lambda / (b * gamma_bar) * integral
        + (1.0 - c_over_lambda) * 0.5 * a / (b * delta * gamma_bar))
}

/// High-SNR shape of the finite-buffer outage probability; same cutoff
/// caveat as [`aer_finite_asymptotic`].
pub fn outage_finite_asymptotic(
    gamma_thr: f64,
    gamma_bar: f64,
    delta: f64,
    c_over_lambda: f64,
    d_over_lambda: f64,
    eps: Option<f64>,
) -> Result<f64> {
    let eps = eps.unwrap_or(delta * 1e-6);
    let integral = quad::integrate(|x| (d_over_lambda * x).exp() / x, eps, delta, 1e-10)?;
    Ok((1.0 - c_over_lambda) * gamma_thr / (gamma_bar * delta)
        + c_over_lambda * gamma_thr / gamma_bar * integral)
}

/// Which uplink figure of merit to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Aer,
    Outage,
}

/// Closed-form metric at normalized coordinates: `k_over_mean` is the
/// capacity in units of the mean harvested energy. Finite capacities use
/// the exponential-type approximation (cutover 2); unbounded buffers use
/// the full-power law for `delta <= 1` and the exact decay rate otherwise.
pub fn closed_form_metric(
    metric: Metric,
    a: f64,
    b: f64,
    gamma_thr: f64,
    gamma_bar: f64,
    delta: f64,
    k_over_mean: Capacity,
) -> Result<f64> {
    let params = match k_over_mean {
        Capacity::Finite(kx) => Some(dist::finite_approx(1.0, delta, kx, 2)?.0),
        Capacity::Infinite => {
            if delta > 1.0 {
                Some(ApproxParams::from_infinite(1.0, delta)?)
            } else {
                None
            }
        }
    };
    match (metric, params) {
        (Metric::Aer, None) => Ok(aer_infinite(a, b, gamma_bar, delta)),
        (Metric::Outage, None) => Ok(outage_infinite(gamma_thr, gamma_bar, delta)),
        (Metric::Aer, Some(p)) => {
            aer_finite(a, b, gamma_bar, delta, p.c_over_lambda(), p.d_over_lambda())
        }
        (Metric::Outage, Some(p)) => outage_finite(
            gamma_thr,
            gamma_bar,
            delta,
            p.c_over_lambda(),
            p.d_over_lambda(),
        ),
    }
}

/// Grid search for the normalized power ratio minimizing the metric; ties
/// break toward the smaller delta. Returns `(delta_opt, metric value)`.
pub fn optimize_delta(
    metric: Metric,
    a: f64,
    b: f64,
    gamma_thr: f64,
    gamma_bar: f64,
    k_over_mean: Capacity,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Param("optimize_delta: empty grid".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &delta in grid {
        if !(delta > 0.0) {
            return Err(Error::Param(format!(
                "optimize_delta: invalid delta {delta}"
            )));
        }
        let v = closed_form_metric(metric, a, b, gamma_thr, gamma_bar, delta, k_over_mean)?;
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((delta, v));
        }
    }
    Ok(best.unwrap())
}

/// Default optimization grid: 0.05 steps on (0, 1.7].
pub fn default_delta_grid() -> Vec<f64> {
    (1..=34).map(|i| i as f64 * 5.0 / 100.0).collect()
}

/// How to choose delta at each SNR point of a sweep.
#[derive(Debug, Clone, Copy)]
pub enum DeltaPolicy {
    Fixed(f64),
    /// Re-optimize on the default grid at every SNR point.
    OptimizedPerPoint,
}

/// Negative log-log slope of the closed-form metric between two SNR
/// endpoints at least 10 dB apart: the empirical diversity order.
#[allow(clippy::too_many_arguments)]
pub fn diversity_slope(
    metric: Metric,
    a: f64,
    b: f64,
    gamma_thr: f64,
    k_over_mean: Capacity,
    gamma_lo_db: f64,
    gamma_hi_db: f64,
    delta: DeltaPolicy,
) -> Result<f64> {
    if gamma_hi_db < gamma_lo_db + 10.0 {
        return Err(Error::Param(format!(
            "diversity_slope: endpoints must be >= 10 dB apart ({gamma_lo_db}, {gamma_hi_db})"
        )));
    }
    let grid = default_delta_grid();
    let eval = |db: f64| -> Result<f64> {
        let gb = (10f64).powf(db / 10.0);
        let d = match delta {
            DeltaPolicy::Fixed(d) => d,
            DeltaPolicy::OptimizedPerPoint => {
                optimize_delta(metric, a, b, gamma_thr, gb, k_over_mean, &grid)?.0
            }
        };
        closed_form_metric(metric, a, b, gamma_thr, gb, d, k_over_mean)
    };
    let lo = eval(gamma_lo_db)?;
    let hi = eval(gamma_hi_db)?;
    Ok(-(hi.log10() - lo.log10()) / ((gamma_hi_db - gamma_lo_db) / 10.0))
}

/// A Monte Carlo estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

const MC_BATCHES: u64 = 100;

/// Semi-analytic Monte Carlo: run the storage chain, and per slot average
/// the conditional figure of merit given the transmit power, with the
/// Rayleigh channel marginalized in closed form. The standard error comes
/// from 100 batch means, which absorbs the serial correlation of the
/// chain.
fn mc_metric(
    spec: &EffectiveSpec,
    link: &LinkModel,
    metric: Metric,
    n_slots: u64,
    burn_in: u64,
    seed: u64,
    initial: f64,
) -> Result<McEstimate> {
    link.validate()?;
    if n_slots <= burn_in {
        return Err(Error::Param("mc: n_slots must exceed burn_in".into()));
    }
    let k = spec.capacity.as_f64();
    let snr_per_energy = link.omega_ul / link.noise_w;
    let gamma_thr = link.gamma_thr();
    let (a, b) = (link.mod_a, link.mod_b);
    let per_slot = |p_ul: f64| -> f64 {
        match metric {
            Metric::Aer => {
                let y = b * p_ul * snr_per_energy;
                0.5 * a * (1.0 - (y / (2.0 + y)).sqrt())
            }
            Metric::Outage => {
                if p_ul <= 0.0 {
                    1.0
                } else {
                    -(-gamma_thr / (p_ul * snr_per_energy)).exp_m1()
                }
            }
        }
    };
    let n_eff = n_slots - burn_in;
    let batch_len = (n_eff / MC_BATCHES).max(1);
    let used = batch_len * MC_BATCHES.min(n_eff);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = initial;
    let mut batch_means = Vec::with_capacity(MC_BATCHES as usize);
    let mut batch_sum = 0.0;
    let mut in_batch = 0u64;
    let mut recorded = 0u64;
    for slot in 0..n_slots {
        if slot >= burn_in && recorded < used {
            batch_sum += per_slot(level.min(spec.m));
            in_batch += 1;
            recorded += 1;
            if in_batch == batch_len {
                batch_means.push(batch_sum / batch_len as f64);
                batch_sum = 0.0;
                in_batch = 0;
            }
        }
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
        let x = spec.harvest.quantile(u);
        level = crate::sim::step(level, x, spec.m, k);
    }
    let nb = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / nb;
    let var = batch_means
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (nb - 1.0);
    Ok(McEstimate {
        value: mean,
        stderr: (var / nb).sqrt(),
    })
}

/// Monte Carlo average error rate (seeded, reproducible).
pub fn mc_aer(
    spec: &EffectiveSpec,
    link: &LinkModel,
    n_slots: u64,
    burn_in: u64,
    seed: u64,
    initial: f64,
) -> Result<McEstimate> {
    mc_metric(spec, link, Metric::Aer, n_slots, burn_in, seed, initial)
}

/// Monte Carlo outage probability; slots with zero transmit power count as
/// certain outage.
pub fn mc_outage(
    spec: &EffectiveSpec,
    link: &LinkModel,
    n_slots: u64,
    burn_in: u64,
    seed: u64,
    initial: f64,
) -> Result<McEstimate> {
    mc_metric(spec, link, Metric::Outage, n_slots, burn_in, seed, initial)
}
