//! Array/device/scatterer geometry and per-device channel statistics.
//!
//! The array is a half-wavelength ULA on the x-axis centered at the origin,
//! so the array midpoint is the origin and broadside is the y-axis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub carrier_wavelength_m: f64,
    pub antenna_count: usize,
    pub cell_radius_m: f64,
    pub scatterer_region_radius_m: f64,
}

impl GeometryConfig {
    pub fn from_carrier(carrier_hz: f64, antenna_count: usize) -> Self {
        Self {
            carrier_wavelength_m: 3.0e8 / carrier_hz,
            antenna_count,
            cell_radius_m: 500.0,
            scatterer_region_radius_m: 200.0,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.carrier_wavelength_m / 2.0
    }

    pub fn aperture(&self) -> f64 {
        (self.antenna_count as f64 - 1.0) * self.spacing()
    }

    pub fn antenna_position(&self, m: usize) -> Point {
        let offset = m as f64 - (self.antenna_count as f64 - 1.0) / 2.0;
        [offset * self.spacing(), 0.0]
    }

    pub fn antenna_positions(&self) -> Vec<Point> {
        (0..self.antenna_count).map(|m| self.antenna_position(m)).collect()
    }
}

/// `2D²/λ` with aperture `D = (M − 1)λ/2`.
pub fn rayleigh_distance(geom: &GeometryConfig) -> f64 {
    let d = geom.aperture();
    2.0 * d * d / geom.carrier_wavelength_m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub position: Point,
    pub scatterer_positions: Vec<Point>,
    pub is_near_field: bool,
}

impl DeviceGeometry {
    pub fn new(position: Point, scatterer_positions: Vec<Point>, geom: &GeometryConfig) -> Self {
        Self {
            position,
            scatterer_positions,
            is_near_field: distance(position, [0.0, 0.0]) < rayleigh_distance(geom),
        }
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Spherical-wave response of the array to a point source with amplitude `gain`.
///
/// Entry `m` is `gain·exp(−j2π(d_m − d_0)/λ)` with `d_0` the distance to the
/// array midpoint.
pub fn steering_vector(source: Point, geom: &GeometryConfig, gain: f64) -> Result<CVec> {
    let d0 = distance(source, [0.0, 0.0]);
    let k = 2.0 * PI / geom.carrier_wavelength_m;
    let mut out = CVec::zeros(geom.antenna_count);
    for m in 0..geom.antenna_count {
        let dm = distance(source, geom.antenna_position(m));
        if dm <= 1e-12 {
            return Err(Error::Geometry(format!(
                "source at ({}, {}) coincides with antenna {m}",
                source[0], source[1]
            )));
        }
        out[m] = Complex64::from_polar(gain, -k * (dm - d0));
    }
    Ok(out)
}

pub fn los_vector(device: &DeviceGeometry, geom: &GeometryConfig, gain: f64) -> Result<CVec> {
    steering_vector(device.position, geom, gain)
}

/// Per-scatterer gains `(σ_ℓ², |β_{n,ℓ}|, β_ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScattererGain {
    pub intensity: f64,
    pub device_gain: f64,
    pub bs_gain: f64,
}

impl ScattererGain {
    /// Gains from the path-loss model; `σ² = 1`.
    pub fn from_pathloss(device: Point, scatterer: Point) -> Result<Self> {
        Ok(Self {
            intensity: 1.0,
            device_gain: pathloss_amplitude(distance(device, scatterer))?,
            bs_gain: pathloss_amplitude(distance(scatterer, [0.0, 0.0]))?,
        })
    }
}

/// `M × ℓ̄` factor whose column ℓ is `σ_ℓ|β_{n,ℓ}|·h̄_ℓ`.
pub fn correlation_factor(
    device: &DeviceGeometry,
    geom: &GeometryConfig,
    gains: &[ScattererGain],
) -> Result<CMat> {
    if device.scatterer_positions.is_empty() {
        return Err(Error::Config("correlated device without scatterers".into()));
    }
    if gains.len() != device.scatterer_positions.len() {
        return Err(Error::Dimension(format!(
            "{} scatterers but {} gain triples",
            device.scatterer_positions.len(),
            gains.len()
        )));
    }
    let mut factor = CMat::zeros(geom.antenna_count, gains.len());
    for (l, (pos, g)) in device.scatterer_positions.iter().zip(gains).enumerate() {
        let h = steering_vector(*pos, geom, g.bs_gain)?;
        let w = g.intensity.sqrt() * g.device_gain.abs();
        factor.set_column(l, &(h * Complex64::new(w, 0.0)));
    }
    Ok(factor)
}

pub fn pathloss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::Geometry(format!("nonpositive distance {distance_km} km")));
    }
    Ok(128.1 + 37.6 * distance_km.log10())
}

/// Amplitude gain `10^(−PL/20)` for a distance in meters.
pub fn pathloss_amplitude(distance_m: f64) -> Result<f64> {
    Ok(10f64.powf(-pathloss_db(distance_m / 1000.0)? / 20.0))
}

/// Spatial correlation of the scattered component.
#[derive(Debug, Clone, PartialEq)]
pub enum Correlation {
    /// `R = F·Fᴴ` with an `M × r` factor.
    LowRank(CMat),
    /// `R = g·I_M`.
    ScaledIdentity(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub los_mean: CVec,
    pub correlation: Correlation,
}

impl ChannelStats {
    pub fn antennas(&self) -> usize {
        self.los_mean.len()
    }

    pub fn corr_rank(&self) -> usize {
        match &self.correlation {
            Correlation::LowRank(f) => f.ncols(),
            Correlation::ScaledIdentity(_) => self.antennas(),
        }
    }

    pub fn corr_trace(&self) -> f64 {
        match &self.correlation {
            Correlation::LowRank(f) => f.iter().map(|z| z.norm_sqr()).sum(),
            Correlation::ScaledIdentity(g) => g * self.antennas() as f64,
        }
    }

    /// `g = tr(R)/M`.
    pub fn large_scale_gain(&self) -> f64 {
        self.corr_trace() / self.antennas() as f64
    }

    /// Materialized `M × r` factor (`√g·I` for the scaled identity).
    pub fn factor(&self) -> CMat {
        match &self.correlation {
            Correlation::LowRank(f) => f.clone(),
            Correlation::ScaledIdentity(g) => {
                CMat::from_diagonal_element(self.antennas(), self.antennas(), Complex64::new(g.sqrt(), 0.0))
            }
        }
    }

    pub fn corr_matrix(&self) -> CMat {
        let f = self.factor();
        &f * f.adjoint()
    }

    /// Trace-matched scaled identity replacing `R`.
    pub fn mismatched(&self) -> ChannelStats {
        ChannelStats {
            los_mean: self.los_mean.clone(),
            correlation: Correlation::ScaledIdentity(self.large_scale_gain()),
        }
    }

    pub fn total_power(&self) -> f64 {
        self.los_mean.norm_squared() + self.corr_trace()
    }

    fn scaled(&self, mean_amp: f64, scatter_amp: f64) -> ChannelStats {
        let correlation = match &self.correlation {
            Correlation::LowRank(f) => Correlation::LowRank(f * Complex64::new(scatter_amp, 0.0)),
            Correlation::ScaledIdentity(g) => Correlation::ScaledIdentity(g * scatter_amp * scatter_amp),
        };
        ChannelStats {
            los_mean: &self.los_mean * Complex64::new(mean_amp, 0.0),
            correlation,
        }
    }
}

/// Scale mean and scattering by one common amplitude so that `‖h̄‖² + tr R = target`.
pub fn apply_power_control(stats: &ChannelStats, target: f64) -> Result<ChannelStats> {
    let p = stats.total_power();
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Numerical("channel statistics carry no power".into()));
    }
    let amp = (target / p).sqrt();
    Ok(stats.scaled(amp, amp))
}

/// Rescale the two components separately so that `‖h̄‖² : tr R = κ : 1`,
/// keeping the total power. `κ = 0` drops the mean (Rayleigh).
pub fn set_rician_factor(stats: &ChannelStats, kappa: f64) -> Result<ChannelStats> {
    let p = stats.total_power();
    let pm = stats.los_mean.norm_squared();
    let ps = stats.corr_trace();
    if !(ps > 0.0) || (kappa > 0.0 && !(pm > 0.0)) {
        return Err(Error::Numerical("cannot split power: empty component".into()));
    }
    let mean_amp = if kappa > 0.0 { (p * kappa / (1.0 + kappa) / pm).sqrt() } else { 0.0 };
    let scatter_amp = (p / (1.0 + kappa) / ps).sqrt();
    Ok(stats.scaled(mean_amp, scatter_amp))
}

/// Uniform point in the disk of radius `r` with a minimum distance from the origin.
pub fn sample_in_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64, min_radius: f64) -> Point {
    let lo = (min_radius / radius).powi(2);
    let u: f64 = rng.random_range(lo..1.0);
    let rho = radius * u.sqrt();
    let phi = rng.random_range(0.0..2.0 * PI);
    [rho * phi.cos(), rho * phi.sin()]
}
