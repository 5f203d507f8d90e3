//! Harvest distributions, plant parameters, and the reduction of an
//! imperfect system (amplifier inefficiency, storage inefficiency, constant
//! circuit drain) onto the ideal storage recursion.
//!
//! Slots have unit duration, so energy-per-slot and power are used
//! interchangeably; every stored quantity is in joules per slot.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reference temperature for noise-figure conversion, K.
pub const NOISE_REF_TEMP_K: f64 = 300.0;

/// Buffer capacity: a finite energy level or an unbounded buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Finite(f64),
    Infinite,
}

impl Capacity {
    pub fn as_f64(self) -> f64 {
        match self {
            Capacity::Finite(k) => k,
            Capacity::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Capacity::Finite(_))
    }
}

/// User-supplied harvest distribution with an infinite positive tail.
pub struct CustomHarvest {
    pub pdf: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub ccdf: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub mean: f64,
}

/// Per-slot harvested energy distribution (i.i.d. across slots).
#[derive(Clone)]
pub enum HarvestModel {
    /// Exponential with the given rate (1/energy); the Rayleigh-fading case.
    Exponential { rate: f64 },
    /// Arbitrary density/ccdf pair, validated at construction.
    Custom(Arc<CustomHarvest>),
}

impl std::fmt::Debug for HarvestModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarvestModel::Exponential { rate } => {
                write!(f, "HarvestModel::Exponential {{ rate: {rate} }}")
            }
            HarvestModel::Custom(c) => write!(f, "HarvestModel::Custom {{ mean: {} }}", c.mean),
        }
    }
}

impl HarvestModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Param(format!(
                "harvest rate must be > 0, got {rate}"
            )));
        }
        Ok(HarvestModel::Exponential { rate })
    }

    /// Exponential model with the given mean energy per slot.
    pub fn exponential_with_mean(mean: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::Param(format!(
                "harvest mean must be > 0, got {mean}"
            )));
        }
        Self::exponential(1.0 / mean)
    }

    /// Build a custom model, checking that the pdf integrates to 1
    /// (tolerance 1e-6) and the ccdf runs from 1 to 0 non-increasingly.
    pub fn custom(
        pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ccdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mean: f64,
    ) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::Param(format!(
                "harvest mean must be > 0, got {mean}"
            )));
        }
        // find a practical upper end of the support
        let mut hi = mean;
        for _ in 0..80 {
            if ccdf(hi) < 1e-10 {
                break;
            }
            hi *= 2.0;
        }
        if ccdf(hi) >= 1e-10 {
            return Err(Error::Param(
                "custom harvest: ccdf does not decay within 2^80 * mean".into(),
            ));
        }
        let mass = quad::integrate(&pdf, 0.0, hi, 1e-9)? + ccdf(hi);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Param(format!(
                "custom harvest: pdf mass {mass} differs from 1 by more than 1e-6"
            )));
        }
        let mut prev = ccdf(0.0);
        if (prev - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!(
                "custom harvest: ccdf(0) = {prev}, expected 1"
            )));
        }
        for i in 1..=64 {
            let x = hi * (i as f64) / 64.0;
            let c = ccdf(x);
            if c > prev + 1e-12 {
                return Err(Error::Param(format!(
                    "custom harvest: ccdf increases at x = {x}"
                )));
            }
            prev = c;
        }
        Ok(HarvestModel::Custom(Arc::new(CustomHarvest {
            pdf: Box::new(pdf),
            ccdf: Box::new(ccdf),
            mean,
        })))
    }

    /// Mean harvested energy per slot.
    pub fn mean(&self) -> f64 {
        match self {
            HarvestModel::Exponential { rate } => 1.0 / rate,
            HarvestModel::Custom(c) => c.mean,
        }
    }

    /// Rate parameter for exponential models.
    pub fn rate(&self) -> Option<f64> {
        match self {
            HarvestModel::Exponential { rate } => Some(*rate),
            HarvestModel::Custom(_) => None,
        }
    }

    /// Density at `x` (zero for negative arguments).
    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            HarvestModel::Exponential { rate } => rate * (-rate * x).exp(),
            HarvestModel::Custom(c) => (c.pdf)(x),
        }
    }

    /// Complementary cdf P(X > x); equals 1 for x <= 0.
    pub fn ccdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match self {
            HarvestModel::Exponential { rate } => (-rate * x).exp(),
            HarvestModel::Custom(c) => (c.ccdf)(x),
        }
    }

    /// Quantile (inverse cdf) at `u` in [0, 1); used by the inverse-CDF
    /// sampler so trajectories are reproducible across platforms.
    pub fn quantile(&self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u));
        match self {
            HarvestModel::Exponential { rate } => -(-u).ln_1p() / rate,
            HarvestModel::Custom(c) => {
                let target = 1.0 - u;
                if (c.ccdf)(0.0) <= target {
                    return 0.0;
                }
                let mut hi = c.mean.max(1e-300);
                while (c.ccdf)(hi) > target {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return hi;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if (c.ccdf)(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// The distribution of `beta * X`: energy surviving storage with
    /// efficiency `beta`.
    pub fn scaled(&self, beta: f64) -> HarvestModel {
        if beta == 1.0 {
            return self.clone();
        }
        match self {
            HarvestModel::Exponential { rate } => HarvestModel::Exponential { rate: rate / beta },
            HarvestModel::Custom(c) => {
                let c1 = Arc::clone(c);
                let c2 = Arc::clone(c);
                let mean = beta * c.mean;
                HarvestModel::Custom(Arc::new(CustomHarvest {
                    pdf: Box::new(move |x| (c1.pdf)(x / beta) / beta),
                    ccdf: Box::new(move |x| (c2.ccdf)(x / beta)),
                    mean,
                }))
            }
        }
    }
}

/// Policy and plant parameters of the node.
#[derive(Debug, Clone, Copy)]
pub struct SystemSpec {
    /// Desired constant UL transmit power M (energy/slot).
    pub m: f64,
    /// Buffer capacity.
    pub capacity: Capacity,
    /// Power-amplifier inefficiency, >= 1.
    pub alpha: f64,
    /// Storage efficiency, in (0, 1].
    pub beta: f64,
    /// Constant circuit power (harvesting/processing/sensing).
    pub p_ct: f64,
    /// Constant buffer leakage power.
    pub p_leak: f64,
    /// DL transmit power of the access point (W).
    pub p_dl: f64,
    /// RF-to-DC conversion efficiency, in (0, 1].
    pub eta: f64,
    /// Mean DL channel power gain.
    pub omega_dl: f64,
}

impl SystemSpec {
    /// An ideal system: unit-efficiency amplifier and storage, no constant
    /// drain. DL-side fields are set to neutral placeholders.
    pub fn ideal(m: f64, capacity: Capacity) -> SystemSpec {
        SystemSpec {
            m,
            capacity,
            alpha: 1.0,
            beta: 1.0,
            p_ct: 0.0,
            p_leak: 0.0,
            p_dl: 1.0,
            eta: 1.0,
            omega_dl: 1.0,
        }
    }

    /// Total constant drain per slot.
    pub fn p_circuit_total(&self) -> f64 {
        self.p_ct + self.p_leak
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) {
            return Err(Error::Param(format!("M must be > 0, got {}", self.m)));
        }
        if let Capacity::Finite(k) = self.capacity {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Param(format!("finite K must be > 0, got {k}")));
            }
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::Param(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Param(format!(
                "beta must be in (0,1], got {}",
                self.beta
            )));
        }
        if self.p_ct < 0.0 || self.p_leak < 0.0 {
            return Err(Error::Param("circuit/leakage power must be >= 0".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Param(format!(
                "eta must be in (0,1], got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// The ideal-equivalent system: threshold `P_C + alpha*M` and the
/// storage-scaled harvest distribution. Every analysis in this crate runs on
/// this form.
#[derive(Debug, Clone)]
pub struct EffectiveSpec {
    /// Effective threshold M~ = P_C + alpha * M.
    pub m: f64,
    pub capacity: Capacity,
    /// beta-scaled harvest model.
    pub harvest: HarvestModel,
    /// lambda~ * M~ for exponential harvest; None for custom models.
    pub delta: Option<f64>,
}

impl EffectiveSpec {
    /// Directly wrap an already-ideal system.
    pub fn ideal(m: f64, capacity: Capacity, harvest: HarvestModel) -> Result<EffectiveSpec> {
        if !(m > 0.0) {
            return Err(Error::Param(format!("M must be > 0, got {m}")));
        }
        let delta = harvest.rate().map(|r| r * m);
        Ok(EffectiveSpec {
            m,
            capacity,
            harvest,
            delta,
        })
    }
}

/// Map an imperfect system onto the ideal storage recursion: the threshold
/// absorbs the constant drain and amplifier loss, and the harvest
/// distribution is scaled by the storage efficiency.
pub fn effective_spec(spec: &SystemSpec, harvest: &HarvestModel) -> Result<EffectiveSpec> {
    spec.validate()?;
    let m_eff = spec.p_circuit_total() + spec.alpha * spec.m;
    let scaled = harvest.scaled(spec.beta);
    let delta = scaled.rate().map(|r| r * m_eff);
    Ok(EffectiveSpec {
        m: m_eff,
        capacity: spec.capacity,
        harvest: scaled,
        delta,
    })
}

/// Uplink channel and modulation parameters.
#[derive(Debug, Clone, Copy)]
pub struct LinkModel {
    /// Mean UL channel power gain.
    pub omega_ul: f64,
    /// Noise power at the receiver (W).
    pub noise_w: f64,
    /// Modulation constant a in a*Q(sqrt(b*gamma)).
    pub mod_a: f64,
    /// Modulation constant b.
    pub mod_b: f64,
    /// Fixed transmission rate R0 (bits/channel use).
    pub rate_r0: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_w > 0.0) {
            return Err(Error::Param("noise power must be > 0".into()));
        }
        if !(self.mod_a > 0.0 && self.mod_b > 0.0) {
            return Err(Error::Param("modulation constants must be > 0".into()));
        }
        if !(self.omega_ul > 0.0) {
            return Err(Error::Param("omega_ul must be > 0".into()));
        }
        Ok(())
    }

    /// Outage SNR threshold 2^R0 - 1.
    pub fn gamma_thr(&self) -> f64 {
        (2f64).powf(self.rate_r0) - 1.0
    }
}

/// Normalized SNR: mean harvested energy delivered over the mean UL gain,
/// relative to noise.
pub fn normalized_snr(link: &LinkModel, harvest: &HarvestModel) -> f64 {
    link.omega_ul * harvest.mean() / link.noise_w
}

/// Receiver noise power k_B * T_e * BW with T_e = 300 K * (10^(NF/10) - 1).
pub fn noise_power_w(noise_figure_db: f64, bandwidth_hz: f64) -> f64 {
    let t_e = NOISE_REF_TEMP_K * ((10f64).powf(noise_figure_db / 10.0) - 1.0);
    BOLTZMANN * t_e * bandwidth_hz
}

/// Mean harvested energy per slot from DL parameters.
pub fn mean_harvest(eta: f64, p_dl: f64, omega_dl: f64) -> f64 {
    eta * p_dl * omega_dl
}

/// Exploratory link-budget helper: free-space gain at a 1 m reference plus
/// power-law rolloff, times antenna gains. Never used to override a
/// configured harvest mean.
pub fn path_gain(
    freq_hz: f64,
    distance_m: f64,
    exponent: f64,
    gain_tx_dbi: f64,
    gain_rx_dbi: f64,
) -> f64 {
    let c = 299_792_458.0;
    let wavelength = c / freq_hz;
    let ref_gain = (wavelength / (4.0 * std::f64::consts::PI)).powi(2);
    let gains = (10f64).powf((gain_tx_dbi + gain_rx_dbi) / 10.0);
    ref_gain * gains / distance_m.powf(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn effective_spec_identity_on_ideal() {
        let spec = SystemSpec::ideal(2.0, Capacity::Finite(8.0));
        let harvest = HarvestModel::exponential(1.0).unwrap();
        let eff = effective_spec(&spec, &harvest).unwrap();
        assert_eq!(eff.m, 2.0);
        assert_eq!(eff.harvest.rate(), Some(1.0));
        assert_eq!(eff.delta, Some(2.0));
        // idempotence: re-applying the reduction to the reduced system
        let spec2 = SystemSpec::ideal(eff.m, eff.capacity);
        let eff2 = effective_spec(&spec2, &eff.harvest).unwrap();
        assert_eq!(eff2.m, eff.m);
        assert_eq!(eff2.delta, eff.delta);
    }

    #[test]
    fn effective_spec_arithmetic() {
        // alpha=1.5, M=4 uJ/slot, P_C=0.2 uW -> M~ = 6.2 uJ/slot
        let mut spec = SystemSpec::ideal(4e-6, Capacity::Infinite);
        spec.alpha = 1.5;
        spec.p_ct = 0.2e-6;
        let harvest = HarvestModel::exponential_with_mean(1e-5).unwrap();
        let eff = effective_spec(&spec, &harvest).unwrap();
        assert_relative_eq!(eff.m, 6.2e-6, max_relative = 1e-12);
    }

    #[test]
    fn beta_scaling_of_exponential() {
        let spec = SystemSpec {
            beta: 0.9,
            ..SystemSpec::ideal(1.0, Capacity::Infinite)
        };
        let harvest = HarvestModel::exponential(1.0).unwrap();
        let eff = effective_spec(&spec, &harvest).unwrap();
        assert_relative_eq!(eff.harvest.rate().unwrap(), 1.0 / 0.9, max_relative = 1e-12);
        assert_relative_eq!(eff.harvest.mean(), 0.9, max_relative = 1e-12);
    }

    #[test]
    fn scaled_custom_mean_consistency() {
        // Erlang-2 with rate 2: pdf 4x e^{-2x}, mean 1
        let h = HarvestModel::custom(
            |x| 4.0 * x * (-2.0 * x).exp(),
            |x| (1.0 + 2.0 * x) * (-2.0 * x).exp(),
            1.0,
        )
        .unwrap();
        let s = h.scaled(0.7);
        let mean = crate::quad::integrate_to_inf(|x| x * s.pdf(x), 0.0, 1e-10).unwrap();
        assert!((mean - 0.7).abs() < 1e-8, "mean={mean}");
        let mass = crate::quad::integrate_to_inf(|x| s.pdf(x), 0.0, 1e-10).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn custom_rejects_bad_density() {
        let r = HarvestModel::custom(|x| (-x).exp() * 0.5, |x| 0.5 * (-x).exp(), 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn normalized_snr_values() {
        let link = LinkModel {
            omega_ul: 1.0,
            noise_w: 1.0,
            mod_a: 1.0,
            mod_b: 2.0,
            rate_r0: 1.0,
        };
        let h = HarvestModel::exponential(1.0).unwrap();
        assert_eq!(normalized_snr(&link, &h), 1.0);
        let h_small = HarvestModel::exponential(1e15).unwrap();
        assert!(normalized_snr(&link, &h_small) < 1e-12);
    }

    #[test]
    fn table_values_noise_and_snr() {
        // 5 MHz bandwidth, 5 dB noise figure: about -103 dBm, and an
        // effective mean of 1e-5 J at the matching UL gain gives 24.6 dB.
        let n = noise_power_w(5.0, 5e6);
        let dbm = 10.0 * (n / 1e-3).log10();
        assert!((dbm + 103.5).abs() < 0.1, "noise {dbm} dBm");
        let x_mean_eff = 1e-5;
        let omega_ul = (10f64).powf(2.46) * n / x_mean_eff;
        let link = LinkModel {
            omega_ul,
            noise_w: n,
            mod_a: 1.0,
            mod_b: 2.0,
            rate_r0: 2.0574,
        };
        let h = HarvestModel::exponential_with_mean(x_mean_eff).unwrap();
        let snr_db = 10.0 * normalized_snr(&link, &h).log10();
        assert!((snr_db - 24.6).abs() < 1e-9);
        // gamma_thr for R0 = 2.0574 is 5 dB
        assert!((10.0 * link.gamma_thr().log10() - 5.0).abs() < 0.01);
    }

    #[test]
    fn path_gain_rolls_off() {
        let g1 = path_gain(2.45e9, 1.0, 2.7, 12.0, 2.0);
        let g5 = path_gain(2.45e9, 5.0, 2.7, 12.0, 2.0);
        assert!(g1 > 0.0 && g5 > 0.0 && g5 < g1);
        assert_relative_eq!(g1 / g5, 5f64.powf(2.7), max_relative = 1e-12);
        // at 1 m the gain is free space times the antenna gains
        let fs = (299_792_458.0 / 2.45e9 / (4.0 * std::f64::consts::PI)).powi(2);
        assert_relative_eq!(g1, fs * 10f64.powf(1.4), max_relative = 1e-12);
    }

    #[test]
    fn quantile_inverts_ccdf() {
        let h = HarvestModel::custom(
            |x| 4.0 * x * (-2.0 * x).exp(),
            |x| (1.0 + 2.0 * x) * (-2.0 * x).exp(),
            1.0,
        )
        .unwrap();
        for &u in &[0.01, 0.3, 0.5, 0.9, 0.999] {
            let x = h.quantile(u);
            assert!((h.ccdf(x) - (1.0 - u)).abs() < 1e-9, "u={u}");
        }
        let e = HarvestModel::exponential(2.0).unwrap();
        assert_relative_eq!(e.quantile(0.5), 0.5f64.ln() / -2.0, max_relative = 1e-12);
    }
}
