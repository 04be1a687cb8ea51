//! Signature sequences, activity patterns, device populations and received
//! signal synthesis.
//!
//! Coordinates are indexed `i = n·Q + q` for device `n` and sequence `q`.
//! The received vector stacks antennas: entry `m·L + l` is antenna `m`,
//! symbol `l`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{stream_rng, CorrelationPolicy, Stream, SystemConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_power_control, correlation_factor, los_vector, pathloss_amplitude, sample_in_disk,
    set_rician_factor, ChannelStats, Correlation, DeviceGeometry, ScattererGain,
};
use crate::linalg::{c, kron, kron_vec, CMat, CVec};

/// Unit-modulus QPSK points `(±1 ± j)/√2`.
pub const QPSK: [Complex64; 4] = [
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    pub per_device: usize,
    /// `N·Q` sequences of length `L`.
    pub sequences: Vec<CVec>,
}

impl SignatureSet {
    pub fn get(&self, device: usize, q: usize) -> &CVec {
        &self.sequences[device * self.per_device + q]
    }
}

pub fn generate_sequences(n_devices: usize, seq_len: usize, per_device: usize, seed: u64) -> SignatureSet {
    let mut rng = stream_rng(seed, 0, Stream::Sequences);
    sequences_from_rng(&mut rng, n_devices, seq_len, per_device)
}

pub fn sequences_from_rng<R: Rng + ?Sized>(
    rng: &mut R,
    n_devices: usize,
    seq_len: usize,
    per_device: usize,
) -> SignatureSet {
    let sequences = (0..n_devices * per_device)
        .map(|_| CVec::from_fn(seq_len, |_, _| QPSK[rng.random_range(0..4)]))
        .collect();
    SignatureSet { per_device, sequences }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityTruth {
    /// Sorted active device indices.
    pub active: Vec<usize>,
    /// Transmitted sequence index for each entry of `active`.
    pub symbols: Vec<usize>,
}

impl ActivityTruth {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n_devices: usize, k: usize, per_device: usize) -> Self {
        let mut active = sample(rng, n_devices, k).into_vec();
        active.sort_unstable();
        let symbols = active.iter().map(|_| rng.random_range(0..per_device)).collect();
        Self { active, symbols }
    }

    pub fn is_active(&self, device: usize) -> bool {
        self.active.binary_search(&device).is_ok()
    }

    pub fn symbol_of(&self, device: usize) -> Option<usize> {
        self.active.binary_search(&device).ok().map(|i| self.symbols[i])
    }

    /// Binary coordinate vector of length `N·Q`.
    pub fn coordinates(&self, n_devices: usize, per_device: usize) -> Vec<f64> {
        let mut a = vec![0.0; n_devices * per_device];
        for (&n, &q) in self.active.iter().zip(&self.symbols) {
            a[n * per_device + q] = 1.0;
        }
        a
    }
}

/// Per-device channel statistics plus per-coordinate signatures.
#[derive(Debug, Clone)]
pub struct DevicePopulation {
    pub antennas: usize,
    pub seq_len: usize,
    pub per_device: usize,
    pub noise_power: f64,
    pub channels: Vec<Arc<ChannelStats>>,
    pub signatures: SignatureSet,
    pub geometry: Vec<DeviceGeometry>,
}

impl DevicePopulation {
    pub fn new(channels: Vec<ChannelStats>, signatures: SignatureSet, seq_len: usize, noise_power: f64) -> Result<Self> {
        let antennas = channels.first().map(|c| c.antennas()).unwrap_or(0);
        if channels.iter().any(|c| c.antennas() != antennas) {
            return Err(Error::Dimension("channels disagree on antenna count".into()));
        }
        if signatures.sequences.len() != channels.len() * signatures.per_device {
            return Err(Error::Dimension("signature count does not match devices".into()));
        }
        if signatures.sequences.iter().any(|s| s.len() != seq_len) {
            return Err(Error::Dimension("signature length mismatch".into()));
        }
        Ok(Self {
            antennas,
            seq_len,
            per_device: signatures.per_device,
            noise_power,
            channels: channels.into_iter().map(Arc::new).collect(),
            signatures,
            geometry: Vec::new(),
        })
    }

    pub fn devices(&self) -> usize {
        self.channels.len()
    }

    /// Number of activity coordinates `N·Q`.
    pub fn coords(&self) -> usize {
        self.signatures.sequences.len()
    }

    pub fn dim(&self) -> usize {
        self.antennas * self.seq_len
    }

    pub fn channel(&self, i: usize) -> &ChannelStats {
        &self.channels[i / self.per_device]
    }

    pub fn sequence(&self, i: usize) -> &CVec {
        &self.signatures.sequences[i]
    }

    /// `X_i = R^{1/2} ⊗ s_i`.
    pub fn x_matrix(&self, i: usize) -> CMat {
        let s = self.sequence(i);
        kron(&self.channel(i).factor(), &CMat::from_column_slice(s.len(), 1, s.as_slice()))
    }

    /// `h̄ ⊗ s_i`.
    pub fn mean_component(&self, i: usize) -> CVec {
        kron_vec(&self.channel(i).los_mean, self.sequence(i))
    }

    /// Same sequences and means, every correlation replaced by `tr(R)/M·I`.
    pub fn mismatched(&self) -> DevicePopulation {
        DevicePopulation {
            channels: self.channels.iter().map(|c| Arc::new(c.mismatched())).collect(),
            ..self.clone()
        }
    }

    /// Indices of devices whose correlation is low-rank, in order.
    pub fn correlated_devices(&self) -> Vec<usize> {
        (0..self.devices())
            .filter(|&n| matches!(self.channels[n].correlation, Correlation::LowRank(_)))
            .collect()
    }

    /// Number of leading low-rank devices when they form a prefix, else `None`.
    pub fn correlated_prefix(&self) -> Option<usize> {
        let corr = self.correlated_devices();
        if corr.iter().enumerate().all(|(i, &n)| i == n) {
            Some(corr.len())
        } else {
            None
        }
    }
}

/// `ȳ_a = Σ a_i (h̄ ⊗ s_i)`.
pub fn mean_vector(pop: &DevicePopulation, a: &[f64]) -> CVec {
    let l = pop.seq_len;
    let mut out = CVec::zeros(pop.dim());
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let h = &pop.channel(i).los_mean;
        let s = pop.sequence(i);
        for m in 0..pop.antennas {
            let hm = h[m] * ai;
            for j in 0..l {
                out[m * l + j] += hm * s[j];
            }
        }
    }
    out
}

/// Dense `Σ_a = Σ a_i R ⊗ (s_i s_iᴴ) + σ²I`; reference path only.
pub fn covariance_matrix(pop: &DevicePopulation, a: &[f64]) -> CMat {
    let n = pop.dim();
    let mut sigma = CMat::from_diagonal_element(n, n, c(pop.noise_power, 0.0));
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let x = pop.x_matrix(i);
        sigma += &x * x.adjoint() * c(ai, 0.0);
    }
    sigma
}

#[derive(Debug, Clone)]
pub struct ReceivedSignal {
    pub y: CVec,
    pub truth: ActivityTruth,
    pub noise_power: f64,
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draw `y = Σ_{active} h_n ⊗ s_{n,q} + w` with `h_n = h̄_n + R^{1/2} z`.
pub fn synthesize_signal<R: Rng + ?Sized>(
    pop: &DevicePopulation,
    truth: &ActivityTruth,
    noise_power: f64,
    rng: &mut R,
) -> Result<ReceivedSignal> {
    if truth.active.len() != truth.symbols.len() {
        return Err(Error::Dimension("active set and symbols differ in length".into()));
    }
    if truth.active.iter().any(|&n| n >= pop.devices()) || truth.symbols.iter().any(|&q| q >= pop.per_device) {
        return Err(Error::Dimension("activity index out of range".into()));
    }
    let mut y = CVec::zeros(pop.dim());
    for (&n, &q) in truth.active.iter().zip(&truth.symbols) {
        let stats = &pop.channels[n];
        let mut h = stats.los_mean.clone();
        match &stats.correlation {
            Correlation::LowRank(f) => {
                let z = CVec::from_fn(f.ncols(), |_, _| complex_normal(rng, 1.0));
                h += f * z;
            }
            Correlation::ScaledIdentity(g) => {
                for hm in h.iter_mut() {
                    *hm += complex_normal(rng, *g);
                }
            }
        }
        y += kron_vec(&h, pop.signatures.get(n, q));
    }
    if noise_power > 0.0 {
        for v in y.iter_mut() {
            *v += complex_normal(rng, noise_power);
        }
    }
    Ok(ReceivedSignal { y, truth: truth.clone(), noise_power })
}

/// Draw device positions, scatterers and statistics for a scenario.
pub fn generate_population<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    signatures: SignatureSet,
    rng: &mut R,
) -> Result<DevicePopulation> {
    cfg.validate()?;
    let geom = cfg.geometry();
    let target = cfg.normalized_rho() * cfg.antennas as f64;
    let kappa = if cfg.channel.has_mean() { cfg.rician_factor } else { 0.0 };
    let mut channels = Vec::with_capacity(cfg.devices);
    let mut geometry = Vec::with_capacity(cfg.devices);
    for n in 0..cfg.devices {
        let pos = sample_in_disk(rng, cfg.cell_radius_m, cfg.min_distance_m);
        let scat: Vec<_> = (0..cfg.scatterers.max(1))
            .map(|_| sample_in_disk(rng, cfg.scatterer_radius_m, 1.0))
            .collect();
        let dev = DeviceGeometry::new(pos, scat, &geom);
        let gains = dev
            .scatterer_positions
            .iter()
            .map(|p| ScattererGain::from_pathloss(dev.position, *p))
            .collect::<Result<Vec<_>>>()?;
        let beta = pathloss_amplitude(crate::geometry::distance(pos, [0.0, 0.0]))?;
        let raw = ChannelStats {
            los_mean: los_vector(&dev, &geom, beta)?,
            correlation: Correlation::LowRank(correlation_factor(&dev, &geom, &gains)?),
        };
        let stats = apply_power_control(&set_rician_factor(&raw, kappa)?, target)?;
        let low_rank = cfg.channel.is_correlated()
            && match cfg.correlation {
                CorrelationPolicy::AllCorrelated => true,
                CorrelationPolicy::ByRayleighDistance => dev.is_near_field,
                CorrelationPolicy::FirstN(k) => n < k,
            };
        channels.push(if low_rank { stats } else { stats.mismatched() });
        geometry.push(dev);
    }
    let mut pop = DevicePopulation::new(channels, signatures, cfg.seq_len, 1.0)?;
    pop.geometry = geometry;
    Ok(pop)
}

/// Population, sequences and truth for one trial of a scenario.
pub fn generate_instance(cfg: &SystemConfig, seed: u64, trial: u64) -> Result<(DevicePopulation, ReceivedSignal)> {
    let mut seq_rng = stream_rng(seed, trial, Stream::Sequences);
    let sigs = sequences_from_rng(&mut seq_rng, cfg.devices, cfg.seq_len, cfg.per_device());
    let mut pop_rng = stream_rng(seed, trial, Stream::Population);
    let pop = generate_population(cfg, sigs, &mut pop_rng)?;
    let mut act_rng = stream_rng(seed, trial, Stream::Activity);
    let truth = ActivityTruth::sample(&mut act_rng, cfg.devices, cfg.active, cfg.per_device());
    let mut sig_rng = stream_rng(seed, trial, Stream::Signal);
    let signal = synthesize_signal(&pop, &truth, pop.noise_power, &mut sig_rng)?;
    Ok((pop, signal))
}
