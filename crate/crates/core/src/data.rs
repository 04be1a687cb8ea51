//! Joint activity and data detection: each device owns `Q = 2^J`
//! sequences and picks one to transmit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::{ActivityTruth, DevicePopulation, SignatureSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataDetectionConfig {
    pub bits: u32,
    /// Device is declared active when `max_q a_{n,q} > threshold`.
    pub threshold: f64,
}

impl DataDetectionConfig {
    pub fn set_size(&self) -> usize {
        1 << self.bits
    }
}

/// Replace the single-sequence signatures of `base` with `Q` sequences per
/// device. Channel statistics are shared, not copied.
pub fn expand_problem(base: &DevicePopulation, signatures: SignatureSet, cfg: &DataDetectionConfig) -> Result<DevicePopulation> {
    let q = cfg.set_size();
    if signatures.per_device != q || signatures.sequences.len() != base.devices() * q {
        return Err(Error::Dimension(format!(
            "expected {} sequences per device for {} devices",
            q,
            base.devices()
        )));
    }
    if signatures.sequences.iter().any(|s| s.len() != base.seq_len) {
        return Err(Error::Dimension("sequence length mismatch".into()));
    }
    Ok(DevicePopulation {
        per_device: q,
        signatures,
        channels: base.channels.iter().map(Arc::clone).collect(),
        ..base.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMessage {
    pub device: usize,
    pub active: bool,
    pub symbol: Option<usize>,
    pub soft_values: Vec<f64>,
}

/// Per device: active iff the largest soft value exceeds `threshold`;
/// the symbol is the first argmax.
pub fn decode(a_hat: &[f64], per_device: usize, threshold: f64) -> Vec<DecodedMessage> {
    a_hat
        .chunks(per_device)
        .enumerate()
        .map(|(device, soft)| {
            let (best, val) = soft
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            let active = val > threshold;
            DecodedMessage { device, active, symbol: active.then_some(best), soft_values: soft.to_vec() }
        })
        .collect()
}

/// `max_q a_{n,q}` per device.
pub fn device_scores(a_hat: &[f64], per_device: usize) -> Vec<f64> {
    a_hat.chunks(per_device).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// `max(0, Σ_q a_{n,q} − 1)` per device.
pub fn combination_violation(a_hat: &[f64], per_device: usize) -> Vec<f64> {
    a_hat.chunks(per_device).map(|c| (c.iter().sum::<f64>() - 1.0).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DataReport {
    pub missed: usize,
    pub false_alarms: usize,
    pub hits: usize,
    pub symbol_errors: usize,
    pub pm: f64,
    pub pf: f64,
    /// Symbol errors among correctly detected active devices.
    pub symbol_error_rate: f64,
}

/// Activity misses and false alarms, plus symbol errors counted separately
/// over detected actives.
pub fn data_error_metrics(decoded: &[DecodedMessage], truth: &ActivityTruth) -> Result<DataReport> {
    if truth.active.iter().any(|&n| n >= decoded.len()) {
        return Err(Error::Dimension("truth refers to devices beyond the decoded list".into()));
    }
    let mut rep = DataReport::default();
    for msg in decoded {
        match (truth.symbol_of(msg.device), msg.active) {
            (Some(q), true) => {
                rep.hits += 1;
                if msg.symbol != Some(q) {
                    rep.symbol_errors += 1;
                }
            }
            (Some(_), false) => rep.missed += 1,
            (None, true) => rep.false_alarms += 1,
            (None, false) => {}
        }
    }
    let k = truth.active.len();
    let inactive = decoded.len() - k;
    rep.pm = if k > 0 { rep.missed as f64 / k as f64 } else { 0.0 };
    rep.pf = if inactive > 0 { rep.false_alarms as f64 / inactive as f64 } else { 0.0 };
    rep.symbol_error_rate = if rep.hits > 0 { rep.symbol_errors as f64 / rep.hits as f64 } else { 0.0 };
    Ok(rep)
}
