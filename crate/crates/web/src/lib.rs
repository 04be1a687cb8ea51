//! wasm-bindgen bindings behind `www/index.html`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use nfad::analysis::statistical_dimension;
use nfad::config::{stream_rng, ChannelCase, Stream, SystemConfig};
use nfad::harness::{run_experiment, solve_population, ExperimentPlan};
use nfad::solver::{SolveOptions, StepKind};
use nfad::synthesis::generate_instance;

fn system(devices: usize, active: usize, antennas: usize, seq_len: usize, scatterers: usize, channel: &str) -> Result<SystemConfig, String> {
    let channel = match channel {
        "correlated-rician" => ChannelCase::CorrelatedRician,
        "correlated-rayleigh" => ChannelCase::CorrelatedRayleigh,
        "uncorrelated" => ChannelCase::Uncorrelated,
        "uncorrelated-rician" => ChannelCase::UncorrelatedRician,
        other => return Err(format!("unknown channel case {other:?}")),
    };
    let cfg = SystemConfig { devices, active, antennas, seq_len, scatterers, channel, ..Default::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Small Monte Carlo run; returns the equal-error point and a thinned PM/PF curve.
pub fn detect_json(cfg: SystemConfig, trials: usize, seed: u64) -> Result<String, String> {
    let plan = ExperimentPlan {
        seed,
        trials,
        system: cfg,
        solver: SolveOptions { max_sweeps: 20, ..Default::default() },
        thresholds: 128,
        ..Default::default()
    };
    let rep = run_experiment(&plan).map_err(|e| e.to_string())?;
    let p = &rep.points[0];
    let curve: Vec<Value> = (0..p.thresholds.len())
        .step_by(4)
        .map(|j| json!([p.thresholds[j], p.pm[j], p.pf[j]]))
        .collect();
    Ok(json!({
        "error_probability": p.error.value,
        "threshold": p.error.theta,
        "crossed": p.error.crossed,
        "converged": p.tally.converged,
        "sweep_cap": p.tally.sweep_cap,
        "diverged": p.tally.diverged,
        "curve": curve,
    })
    .to_string())
}

/// Objective per sweep of one instance under the exact or inexact solver.
pub fn trace_json(cfg: SystemConfig, seed: u64, exact: bool) -> Result<String, String> {
    let (pop, signal) = generate_instance(&cfg, seed, 0).map_err(|e| e.to_string())?;
    let opts = SolveOptions {
        kind: if exact { StepKind::Exact } else { StepKind::Inexact },
        max_sweeps: 40,
        ..Default::default()
    };
    let mut rng = stream_rng(seed, 0, Stream::Solver);
    let rep = solve_population(&pop, &signal.y, &opts, &mut rng).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = rep.trace.iter().map(|r| json!([r.sweep, r.objective, r.v_norm])).collect();
    let mut order: Vec<usize> = (0..rep.a.len()).collect();
    order.sort_by(|&i, &k| rep.a[k].total_cmp(&rep.a[i]));
    order.truncate(cfg.active.max(1) * 2);
    Ok(json!({
        "termination": rep.termination.label(),
        "objective": rep.objective,
        "trace": rows,
        "truth": signal.truth.active,
        "top": order.iter().map(|&i| json!([i, rep.a[i]])).collect::<Vec<_>>(),
    })
    .to_string())
}

pub fn dimension_json(cfg: SystemConfig, seed: u64) -> Result<String, String> {
    let (pop, _) = generate_instance(&cfg, seed, 0).map_err(|e| e.to_string())?;
    let d = statistical_dimension(&pop, 2048).map_err(|e| e.to_string())?;
    Ok(json!({
        "d_one": d.d_one,
        "d_two": d.d_two,
        "bound_one": d.bound_one,
        "bound_two": d.bound_two,
        "r_bar": d.r_bar,
        "rank_sum": d.rank_sum,
        "regime": format!("{:?}", d.regime),
    })
    .to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn detect(
    devices: usize,
    active: usize,
    antennas: usize,
    seq_len: usize,
    scatterers: usize,
    channel: &str,
    trials: usize,
    seed: u64,
) -> Result<String, JsError> {
    let cfg = system(devices, active, antennas, seq_len, scatterers, channel).map_err(|e| JsError::new(&e))?;
    detect_json(cfg, trials.max(1), seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn trace(
    devices: usize,
    active: usize,
    antennas: usize,
    seq_len: usize,
    scatterers: usize,
    channel: &str,
    seed: u64,
    exact: bool,
) -> Result<String, JsError> {
    let cfg = system(devices, active, antennas, seq_len, scatterers, channel).map_err(|e| JsError::new(&e))?;
    trace_json(cfg, seed, exact).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn dimension(devices: usize, antennas: usize, seq_len: usize, scatterers: usize, channel: &str, seed: u64) -> Result<String, JsError> {
    let cfg = system(devices, 0, antennas, seq_len, scatterers, channel).map_err(|e| JsError::new(&e))?;
    dimension_json(cfg, seed).map_err(|e| JsError::new(&e))
}
