//! Scalar system parameters and the structured-text scenario format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelCase {
    /// LoS mean plus low-rank scatterer correlation.
    CorrelatedRician,
    /// Low-rank scatterer correlation, zero mean.
    CorrelatedRayleigh,
    /// Zero mean, `R = g·I` with `g` matched to the correlated model's trace.
    Uncorrelated,
    /// LoS mean, `R = g·I` with matched `g`.
    UncorrelatedRician,
}

impl ChannelCase {
    pub fn has_mean(self) -> bool {
        matches!(self, ChannelCase::CorrelatedRician | ChannelCase::UncorrelatedRician)
    }

    pub fn is_correlated(self) -> bool {
        matches!(self, ChannelCase::CorrelatedRician | ChannelCase::CorrelatedRayleigh)
    }
}

/// Which devices receive a scatterer-built correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationPolicy {
    /// Every device uses its scatterers.
    AllCorrelated,
    /// Only devices inside the Rayleigh distance; the rest get `g·I`.
    ByRayleighDistance,
    /// The first `n` devices are correlated, the rest get `g·I`.
    FirstN(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// N
    pub devices: usize,
    /// K
    pub active: usize,
    /// L
    pub seq_len: usize,
    /// M
    pub antennas: usize,
    /// J; each device holds `2^J` sequences.
    pub bits: u32,
    /// ℓ̄, scatterers per correlated device.
    pub scatterers: usize,
    pub carrier_hz: f64,
    pub cell_radius_m: f64,
    pub scatterer_radius_m: f64,
    /// Devices are kept at least this far from the array midpoint.
    pub min_distance_m: f64,
    pub rho_dbm: f64,
    pub noise_dbm_per_hz: f64,
    pub bandwidth_hz: f64,
    /// Ratio `‖h̄‖² / tr R` used for Rician cases.
    pub rician_factor: f64,
    pub channel: ChannelCase,
    pub correlation: CorrelationPolicy,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            devices: 50,
            active: 5,
            seq_len: 10,
            antennas: 16,
            bits: 0,
            scatterers: 4,
            carrier_hz: 3e9,
            cell_radius_m: 500.0,
            scatterer_radius_m: 200.0,
            min_distance_m: 10.0,
            rho_dbm: -105.1,
            noise_dbm_per_hz: -169.0,
            bandwidth_hz: 10e6,
            rician_factor: 1.0,
            channel: ChannelCase::CorrelatedRician,
            correlation: CorrelationPolicy::AllCorrelated,
        }
    }
}

impl SystemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SystemConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.devices == 0 || self.seq_len == 0 || self.antennas == 0 {
            return bad("devices, seq_len and antennas must be positive");
        }
        if self.active > self.devices {
            return bad("active count exceeds device count");
        }
        if self.antennas < 2 {
            return bad("at least two antennas are required");
        }
        if self.bits > 8 {
            return bad("bits above 8 are not supported");
        }
        if self.channel.is_correlated() && self.scatterers == 0 {
            return bad("correlated channels need at least one scatterer");
        }
        if !(self.carrier_hz > 0.0 && self.cell_radius_m > self.min_distance_m && self.min_distance_m > 0.0) {
            return bad("invalid carrier or cell geometry");
        }
        if !(self.scatterer_radius_m > 0.0) || self.rician_factor < 0.0 {
            return bad("invalid scatterer radius or Rician factor");
        }
        if let CorrelationPolicy::FirstN(n) = self.correlation {
            if n > self.devices {
                return bad("more correlated devices than devices");
            }
        }
        Ok(())
    }

    /// Sequences per device, `Q = 2^J`.
    pub fn per_device(&self) -> usize {
        1 << self.bits
    }

    /// Noise power in dBm over the configured bandwidth.
    pub fn noise_dbm(&self) -> f64 {
        self.noise_dbm_per_hz + 10.0 * self.bandwidth_hz.log10()
    }

    /// `ρ/σ_w²`; all synthesis works in units where `σ_w² = 1`.
    pub fn normalized_rho(&self) -> f64 {
        10f64.powf((self.rho_dbm - self.noise_dbm()) / 10.0)
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            cell_radius_m: self.cell_radius_m,
            scatterer_region_radius_m: self.scatterer_radius_m,
            ..GeometryConfig::from_carrier(self.carrier_hz, self.antennas)
        }
    }
}

/// Purpose tags keep the random streams of one trial independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Population = 0,
    Sequences = 1,
    Activity = 2,
    Signal = 3,
    Solver = 4,
}

/// Deterministic generator for `(seed, trial, purpose)`.
pub fn stream_rng(seed: u64, trial: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(8).wrapping_add(purpose as u64));
    rng
}
