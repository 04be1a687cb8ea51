//! Monte Carlo experiment driver: plans, trials, PM/PF curves and the
//! equal-error operating point.

use std::fmt::Write as _;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{stream_rng, Stream, SystemConfig};
use crate::data::{data_error_metrics, decode, device_scores};
use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::lowrank::{build_basis, BlockModel};
use crate::mle::FullModel;
use crate::solver::{solve, SolveOptions, SolveReport, StepKind, Termination};
use crate::synthesis::{generate_instance, ActivityTruth, DevicePopulation};

pub const DEFAULT_THRESHOLDS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    #[serde(alias = "M")]
    Antennas,
    #[serde(alias = "L")]
    SeqLen,
    #[serde(alias = "N")]
    Devices,
    #[serde(alias = "K")]
    Active,
    Scatterers,
    #[serde(alias = "J")]
    Bits,
}

impl SweepVariable {
    pub fn label(self) -> &'static str {
        match self {
            SweepVariable::Antennas => "M",
            SweepVariable::SeqLen => "L",
            SweepVariable::Devices => "N",
            SweepVariable::Active => "K",
            SweepVariable::Scatterers => "scatterers",
            SweepVariable::Bits => "J",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    /// Solve with the true correlation matrices.
    #[default]
    True,
    /// Replace every `R_n` by `tr(R_n)/M · I`.
    Mismatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub trials: usize,
    pub system: SystemConfig,
    pub solver: SolveOptions,
    pub sweep: Option<Sweep>,
    pub model: ModelChoice,
    /// When sweeping N, scale K to keep K/N fixed.
    pub keep_active_ratio: bool,
    pub thresholds: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 20,
            system: SystemConfig::default(),
            solver: SolveOptions::default(),
            sweep: None,
            model: ModelChoice::True,
            keep_active_ratio: false,
            thresholds: DEFAULT_THRESHOLDS,
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.thresholds < 2 {
            return Err(Error::Config("need at least two thresholds".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep value list is empty".into()));
            }
        }
        for (_, cfg) in self.points()? {
            cfg.validate()?;
        }
        Ok(())
    }

    /// One system configuration per sweep value (a single point without a sweep).
    pub fn points(&self) -> Result<Vec<(Option<usize>, SystemConfig)>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(None, self.system.clone())]);
        };
        sweep
            .values
            .iter()
            .map(|&v| {
                let mut cfg = self.system.clone();
                match sweep.variable {
                    SweepVariable::Antennas => cfg.antennas = v,
                    SweepVariable::SeqLen => cfg.seq_len = v,
                    SweepVariable::Devices => {
                        if self.keep_active_ratio {
                            let ratio = self.system.active as f64 / self.system.devices as f64;
                            cfg.active = (ratio * v as f64).round() as usize;
                        }
                        cfg.devices = v;
                    }
                    SweepVariable::Active => cfg.active = v,
                    SweepVariable::Scatterers => cfg.scatterers = v,
                    SweepVariable::Bits => {
                        cfg.bits = u32::try_from(v).map_err(|_| Error::Config("bits out of range".into()))?
                    }
                }
                Ok((Some(v), cfg))
            })
            .collect()
    }
}

/// Block model when the correlated devices leave part of `C^M` free,
/// otherwise the full model.
pub fn solve_population<R: rand::Rng + ?Sized>(
    pop: &DevicePopulation,
    y: &CVec,
    opts: &SolveOptions,
    rng: &mut R,
) -> Result<SolveReport> {
    match build_basis(pop) {
        Ok(basis) => {
            let mut model = BlockModel::new(pop, &basis, y)?;
            Ok(solve(&mut model, opts, rng))
        }
        Err(Error::FullRankSum { .. }) => {
            let mut model = FullModel::new(pop, y)?;
            Ok(solve(&mut model, opts, rng))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: u64,
    pub truth: ActivityTruth,
    pub a: Vec<f64>,
    pub per_device: usize,
    /// `max_q a_{n,q}` per device.
    pub scores: Vec<f64>,
    pub termination: Termination,
    pub sweeps: usize,
    pub objective: f64,
    pub elapsed_s: f64,
}

impl TrialOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    /// `(missed, false alarms)` when declaring `score > theta` active.
    pub fn errors_at(&self, theta: f64) -> (usize, usize) {
        let mut missed = 0;
        let mut false_alarms = 0;
        for (n, &s) in self.scores.iter().enumerate() {
            match (self.truth.is_active(n), s > theta) {
                (true, false) => missed += 1,
                (false, true) => false_alarms += 1,
                _ => {}
            }
        }
        (missed, false_alarms)
    }
}

pub fn run_trial(cfg: &SystemConfig, opts: &SolveOptions, model: ModelChoice, seed: u64, trial: u64) -> Result<TrialOutcome> {
    let start = Instant::now();
    let (pop, signal) = generate_instance(cfg, seed, trial)?;
    let pop = match model {
        ModelChoice::True => pop,
        ModelChoice::Mismatched => pop.mismatched(),
    };
    let mut rng = stream_rng(seed, trial, Stream::Solver);
    let report = solve_population(&pop, &signal.y, opts, &mut rng)?;
    Ok(TrialOutcome {
        trial,
        scores: device_scores(&report.a, pop.per_device),
        per_device: pop.per_device,
        truth: signal.truth,
        sweeps: report.trace.last().map_or(0, |r| r.sweep),
        termination: report.termination,
        objective: report.objective,
        a: report.a,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn run_trials(cfg: &SystemConfig, opts: &SolveOptions, model: ModelChoice, seed: u64, trials: usize) -> Result<Vec<TrialOutcome>> {
    let ids: Vec<u64> = (0..trials as u64).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ids.par_iter().map(|&t| run_trial(cfg, opts, model, seed, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ids.iter().map(|&t| run_trial(cfg, opts, model, seed, t)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub converged: usize,
    pub sweep_cap: usize,
    pub diverged: usize,
}

impl Tally {
    pub fn of(outcomes: &[TrialOutcome]) -> Self {
        let mut t = Tally::default();
        for o in outcomes {
            match o.termination {
                Termination::Converged => t.converged += 1,
                Termination::SweepCap => t.sweep_cap += 1,
                Termination::Diverged { .. } => t.diverged += 1,
            }
        }
        t
    }

    pub fn total(&self) -> usize {
        self.converged + self.sweep_cap + self.diverged
    }
}

/// Equal-error operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub theta: f64,
    pub value: f64,
    /// False when the curves never meet on the grid; `value` is then taken
    /// at the endpoint where they are closest.
    pub crossed: bool,
}

/// `(j + ½)/n` for `j < n`.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect()
}

/// Trial-averaged PM and PF on `thetas`, diverged trials excluded.
pub fn pm_pf_curves(outcomes: &[TrialOutcome], thetas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let used: Vec<&TrialOutcome> = outcomes.iter().filter(|o| !o.diverged()).collect();
    let mut pm = vec![0.0; thetas.len()];
    let mut pf = vec![0.0; thetas.len()];
    if used.is_empty() {
        return (pm, pf);
    }
    for o in &used {
        let k = o.truth.active.len();
        let inactive = o.scores.len() - k;
        for (j, &t) in thetas.iter().enumerate() {
            let (miss, fa) = o.errors_at(t);
            if k > 0 {
                pm[j] += miss as f64 / k as f64;
            }
            if inactive > 0 {
                pf[j] += fa as f64 / inactive as f64;
            }
        }
    }
    let count = used.len() as f64;
    pm.iter_mut().chain(pf.iter_mut()).for_each(|v| *v /= count);
    (pm, pf)
}

/// Point where the linearly interpolated PM and PF curves meet, located
/// by bisection inside the first bracketing grid interval.
pub fn error_probability(thetas: &[f64], pm: &[f64], pf: &[f64]) -> Result<Crossing> {
    let n = thetas.len();
    if n == 0 || pm.len() != n || pf.len() != n {
        return Err(Error::Dimension("curves must share a non-empty grid".into()));
    }
    let diff = |j: usize| pm[j] - pf[j];
    for j in 0..n {
        if diff(j) == 0.0 {
            return Ok(Crossing { theta: thetas[j], value: pm[j], crossed: true });
        }
        if j + 1 < n && (diff(j) < 0.0) != (diff(j + 1) < 0.0) && diff(j + 1) != 0.0 {
            let lerp = |v: &[f64], s: f64| v[j] + s * (v[j + 1] - v[j]);
            let g = |s: f64| lerp(pm, s) - lerp(pf, s);
            let (mut lo, mut hi) = (0.0, 1.0);
            let neg_lo = g(lo) < 0.0;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if (g(mid) < 0.0) == neg_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let s = 0.5 * (lo + hi);
            return Ok(Crossing {
                theta: thetas[j] + s * (thetas[j + 1] - thetas[j]),
                value: 0.5 * (lerp(pm, s) + lerp(pf, s)),
                crossed: true,
            });
        }
    }
    let j = if diff(0).abs() <= diff(n - 1).abs() { 0 } else { n - 1 };
    Ok(Crossing { theta: thetas[j], value: pm[j].max(pf[j]), crossed: false })
}

/// One-sided p-value for `H1: p1 < p2` from the pooled two-proportion
/// z statistic.
pub fn one_sided_two_proportion(errors1: usize, n1: usize, errors2: usize, n2: usize) -> f64 {
    if n1 == 0 || n2 == 0 {
        return 1.0;
    }
    let (p1, p2) = (errors1 as f64 / n1 as f64, errors2 as f64 / n2 as f64);
    let pooled = (errors1 + errors2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return 1.0;
    }
    normal_upper_tail((p2 - p1) / se)
}

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionPoint {
    pub value: Option<usize>,
    pub config: SystemConfig,
    pub thresholds: Vec<f64>,
    pub pm: Vec<f64>,
    pub pf: Vec<f64>,
    pub error: Crossing,
    /// Misses plus false alarms at the crossing threshold, non-diverged trials.
    pub errors_at_crossing: usize,
    /// Device decisions behind `errors_at_crossing`.
    pub decisions: usize,
    pub tally: Tally,
    /// Wrong symbols among detected actives at the crossing threshold.
    pub symbol_error_rate: f64,
    pub mean_sweeps: f64,
    pub mean_runtime_s: f64,
}

impl DetectionPoint {
    pub fn from_outcomes(value: Option<usize>, config: SystemConfig, outcomes: &[TrialOutcome], grid: usize) -> Result<Self> {
        let thresholds = threshold_grid(grid);
        let (pm, pf) = pm_pf_curves(outcomes, &thresholds);
        let error = error_probability(&thresholds, &pm, &pf)?;
        let (mut errors, mut decisions, mut sym_err, mut hits) = (0, 0, 0, 0);
        for o in outcomes.iter().filter(|o| !o.diverged()) {
            let (miss, fa) = o.errors_at(error.theta);
            errors += miss + fa;
            decisions += o.scores.len();
            let rep = data_error_metrics(&decode(&o.a, o.per_device, error.theta), &o.truth)?;
            sym_err += rep.symbol_errors;
            hits += rep.hits;
        }
        let count = outcomes.len().max(1) as f64;
        Ok(Self {
            value,
            config,
            thresholds,
            pm,
            pf,
            error,
            errors_at_crossing: errors,
            decisions,
            tally: Tally::of(outcomes),
            symbol_error_rate: if hits > 0 { sym_err as f64 / hits as f64 } else { 0.0 },
            mean_sweeps: outcomes.iter().map(|o| o.sweeps as f64).sum::<f64>() / count,
            mean_runtime_s: outcomes.iter().map(|o| o.elapsed_s).sum::<f64>() / count,
        })
    }

    /// Error fraction at the crossing, the quantity behind the z-test.
    pub fn error_rate(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.errors_at_crossing as f64 / self.decisions as f64
        }
    }

    /// One-sided p-value that this point has a lower error rate than `other`.
    pub fn better_than(&self, other: &DetectionPoint) -> f64 {
        one_sided_two_proportion(self.errors_at_crossing, self.decisions, other.errors_at_crossing, other.decisions)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub variable: Option<SweepVariable>,
    pub model: ModelChoice,
    pub points: Vec<DetectionPoint>,
}

impl DetectionReport {
    /// Long format: `variable,value,metric,metric_value`. Wall-clock
    /// quantities are left out so identical plans give identical bytes.
    pub fn to_csv(&self) -> String {
        let var = self.variable.map_or("none", SweepVariable::label);
        let mut out = String::from("variable,value,metric,metric_value\n");
        for p in &self.points {
            let value = p.value.map_or_else(|| "-".to_string(), |v| v.to_string());
            let t = p.tally.total().max(1) as f64;
            let rows: [(&str, f64); 10] = [
                ("error_probability", p.error.value),
                ("crossing_threshold", p.error.theta),
                ("crossed", p.error.crossed as u8 as f64),
                ("error_rate_at_crossing", p.error_rate()),
                ("symbol_error_rate", p.symbol_error_rate),
                ("converged_rate", p.tally.converged as f64 / t),
                ("sweep_cap_rate", p.tally.sweep_cap as f64 / t),
                ("diverged_rate", p.tally.diverged as f64 / t),
                ("trials", p.tally.total() as f64),
                ("mean_sweeps", p.mean_sweeps),
            ];
            for (metric, v) in rows {
                let _ = writeln!(out, "{var},{value},{metric},{v}");
            }
        }
        out
    }

    /// Plot data: `value,theta,pm,pf` for every grid point.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("value,theta,pm,pf\n");
        for p in &self.points {
            let value = p.value.map_or_else(|| "-".to_string(), |v| v.to_string());
            for ((t, pm), pf) in p.thresholds.iter().zip(&p.pm).zip(&p.pf) {
                let _ = writeln!(out, "{value},{t},{pm},{pf}");
            }
        }
        out
    }
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<DetectionReport> {
    plan.validate()?;
    let points = plan
        .points()?
        .into_iter()
        .map(|(value, cfg)| {
            let outcomes = run_trials(&cfg, &plan.solver, plan.model, plan.seed, plan.trials)?;
            DetectionPoint::from_outcomes(value, cfg, &outcomes, plan.thresholds)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionReport { variable: plan.sweep.as_ref().map(|s| s.variable), model: plan.model, points })
}

/// Same pipeline with every correlation replaced by its trace-matched
/// scaled identity.
pub fn baseline_mismatched(plan: &ExperimentPlan) -> Result<DetectionReport> {
    run_experiment(&ExperimentPlan { model: ModelChoice::Mismatched, ..plan.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub scatterers: usize,
    pub instances: usize,
    pub exact: Tally,
    pub inexact: Tally,
}

impl ConvergenceRow {
    pub fn exact_fraction(&self) -> f64 {
        self.exact.converged as f64 / self.instances.max(1) as f64
    }

    pub fn inexact_fraction(&self) -> f64 {
        self.inexact.converged as f64 / self.instances.max(1) as f64
    }
}

/// Converged fraction of the exact and inexact solvers on the same
/// instances for each scatterer count.
pub fn convergence_table(plan: &ExperimentPlan, scatterers: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let exact = SolveOptions { kind: StepKind::Exact, ..plan.solver.clone() };
    let inexact = SolveOptions { kind: StepKind::Inexact, ..plan.solver.clone() };
    scatterers
        .iter()
        .map(|&l| {
            let cfg = SystemConfig { scatterers: l, ..plan.system.clone() };
            cfg.validate()?;
            let ex = run_trials(&cfg, &exact, plan.model, plan.seed, plan.trials)?;
            let inx = run_trials(&cfg, &inexact, plan.model, plan.seed, plan.trials)?;
            Ok(ConvergenceRow { scatterers: l, instances: plan.trials, exact: Tally::of(&ex), inexact: Tally::of(&inx) })
        })
        .collect()
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("scatterers,instances,exact_converged,exact_diverged,inexact_converged,inexact_diverged\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scatterers, r.instances, r.exact.converged, r.exact.diverged, r.inexact.converged, r.inexact.diverged
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ChannelCase;
    use proptest::prelude::*;

    fn outcome(scores: Vec<f64>, active: Vec<usize>) -> TrialOutcome {
        let symbols = vec![0; active.len()];
        TrialOutcome {
            trial: 0,
            truth: ActivityTruth { active, symbols },
            a: scores.clone(),
            per_device: 1,
            scores,
            termination: Termination::Converged,
            sweeps: 1,
            objective: 0.0,
            elapsed_s: 0.0,
        }
    }

    fn tiny_plan() -> ExperimentPlan {
        ExperimentPlan {
            trials: 4,
            thresholds: 64,
            system: SystemConfig {
                devices: 6,
                active: 2,
                antennas: 4,
                seq_len: 4,
                scatterers: 2,
                ..Default::default()
            },
            solver: SolveOptions { max_sweeps: 10, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn constant_curves() {
        let t = threshold_grid(16);
        let c = error_probability(&t, &[0.1; 16], &[0.1; 16]).unwrap();
        assert!(c.crossed && (c.value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn symmetric_crossing() {
        let t = threshold_grid(10);
        let pf: Vec<f64> = t.iter().map(|x| 1.0 - x).collect();
        let c = error_probability(&t, &t, &pf).unwrap();
        assert!(c.crossed);
        assert!((c.theta - 0.5).abs() < 1e-12 && (c.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_crossing_is_flagged() {
        let t = threshold_grid(8);
        let c = error_probability(&t, &[0.5; 8], &[0.1; 8]).unwrap();
        assert!(!c.crossed);
        assert!(error_probability(&t, &[0.5; 3], &[0.1; 8]).is_err());
    }

    #[test]
    fn crossing_matches_dense_grid() {
        let outs: Vec<TrialOutcome> = (0..5)
            .map(|k| {
                let s = (0..6).map(|n| ((n * 7 + k * 3) % 11) as f64 / 11.0).collect();
                outcome(s, vec![k % 6, (k + 2) % 6])
            })
            .collect();
        let grid = threshold_grid(64);
        let (pm, pf) = pm_pf_curves(&outs, &grid);
        let c = error_probability(&grid, &pm, &pf).unwrap();
        assert!(c.crossed);
        let lerp = |v: &[f64], x: f64| {
            let j = grid.iter().rposition(|&g| g <= x).unwrap().min(grid.len() - 2);
            let s = (x - grid[j]) / (grid[j + 1] - grid[j]);
            v[j] + s * (v[j + 1] - v[j])
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut x = grid[0];
        while x <= grid[grid.len() - 1] {
            let gap = (lerp(&pm, x) - lerp(&pf, x)).abs();
            if gap < best.0 {
                best = (gap, x);
            }
            x += 1e-4;
        }
        assert!((best.1 - c.theta).abs() < 2e-4, "{} vs {}", best.1, c.theta);
    }

    #[test]
    fn hand_counted_fixture() {
        let outs = vec![
            outcome(vec![0.9, 0.2, 0.6, 0.0], vec![0]),
            outcome(vec![0.3, 0.8, 0.1, 0.1], vec![1, 3]),
            outcome(vec![0.0, 0.0, 0.7, 0.7], vec![2]),
            outcome(vec![0.4, 0.4, 0.4, 0.4], vec![0]),
            outcome(vec![1.0, 0.0, 0.0, 0.55], vec![0, 3]),
        ];
        let (pm, pf) = pm_pf_curves(&outs, &[0.5]);
        // misses at 0.5: trial1 device3, trial3 device0 -> 1/2 + 1
        assert!((pm[0] - (0.0 + 0.5 + 0.0 + 1.0 + 0.0) / 5.0).abs() < 1e-15);
        // false alarms: t0 device2 (1/3), t2 device3 (1/3)
        assert!((pf[0] - (1.0 / 3.0 + 0.0 + 1.0 / 3.0 + 0.0 + 0.0) / 5.0).abs() < 1e-15);
        let mut shuffled = outs.clone();
        shuffled.reverse();
        assert_eq!(pm_pf_curves(&shuffled, &[0.5]), (pm, pf));
    }

    #[test]
    fn diverged_trials_are_excluded() {
        let mut bad = outcome(vec![1.0, 1.0], vec![]);
        bad.termination = Termination::Diverged { sweep: 1, coordinate: Some(0), reason: "x".into() };
        let good = outcome(vec![0.0, 0.0], vec![]);
        let (_, pf) = pm_pf_curves(&[bad.clone(), good], &[0.5]);
        assert_eq!(pf[0], 0.0);
        assert_eq!(Tally::of(&[bad]).diverged, 1);
    }

    #[test]
    fn z_test_direction() {
        assert!(one_sided_two_proportion(10, 1000, 50, 1000) < 0.001);
        assert!(one_sided_two_proportion(50, 1000, 10, 1000) > 0.99);
        assert_eq!(one_sided_two_proportion(0, 100, 0, 100), 1.0);
        let p = one_sided_two_proportion(30, 1000, 30, 1000);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn plan_parsing_and_points() {
        let plan = ExperimentPlan::from_toml(
            "seed = 3\ntrials = 5\nkeep_active_ratio = true\n[system]\ndevices = 50\nactive = 5\n[sweep]\nvariable = \"N\"\nvalues = [30, 70]\n",
        )
        .unwrap();
        let pts = plan.points().unwrap();
        assert_eq!((pts[0].1.devices, pts[0].1.active), (30, 3));
        assert_eq!((pts[1].1.devices, pts[1].1.active), (70, 7));
        assert!(ExperimentPlan::from_toml("trials = 0\n").is_err());
        assert!(ExperimentPlan::from_toml("[sweep]\nvariable = \"L\"\nvalues = []\n").is_err());
        assert!(ExperimentPlan::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn noise_only_plan_has_vanishing_false_alarms_at_high_threshold() {
        let plan = ExperimentPlan { system: SystemConfig { active: 0, ..tiny_plan().system }, ..tiny_plan() };
        let rep = run_experiment(&plan).unwrap();
        let p = &rep.points[0];
        assert!(p.pm.iter().all(|&v| v == 0.0));
        assert_eq!(*p.pf.last().unwrap(), 0.0);
    }

    #[test]
    fn far_field_population_is_unchanged_by_mismatch() {
        let plan = ExperimentPlan { system: SystemConfig { channel: ChannelCase::UncorrelatedRician, ..tiny_plan().system }, ..tiny_plan() };
        let a = run_experiment(&plan).unwrap();
        let b = baseline_mismatched(&plan).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn experiment_is_deterministic() {
        let plan = ExperimentPlan {
            sweep: Some(Sweep { variable: SweepVariable::SeqLen, values: vec![3, 5] }),
            ..tiny_plan()
        };
        let a = run_experiment(&plan).unwrap();
        let b = run_experiment(&plan).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.curves_csv(), b.curves_csv());
        assert_eq!(a.to_csv().lines().count(), 1 + 2 * 10);
    }

    #[test]
    fn convergence_table_counts_everything() {
        let rows = convergence_table(&ExperimentPlan { trials: 2, ..tiny_plan() }, &[1]).unwrap();
        assert_eq!(rows[0].exact.total(), 2);
        assert_eq!(rows[0].inexact.total(), 2);
        assert!(convergence_csv(&rows).starts_with("scatterers,"));
    }

    proptest! {
        #[test]
        fn curves_are_monotone_probabilities(seed in 0u64..500, trials in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let outs: Vec<TrialOutcome> = (0..trials)
                .map(|_| {
                    let s: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..1.0)).collect();
                    let truth = ActivityTruth::sample(&mut rng, 7, 3, 1);
                    outcome(s, truth.active)
                })
                .collect();
            let grid = threshold_grid(32);
            let (pm, pf) = pm_pf_curves(&outs, &grid);
            for j in 0..grid.len() {
                prop_assert!((0.0..=1.0).contains(&pm[j]) && (0.0..=1.0).contains(&pf[j]));
                if j > 0 {
                    prop_assert!(pm[j] >= pm[j - 1] && pf[j] <= pf[j - 1]);
                }
            }
        }
    }
}
