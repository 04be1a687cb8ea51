use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;

use nfad::analysis::{cosine_similarity_pair, identifiability_scan, statistical_dimension};
use nfad::config::{stream_rng, Stream};
use nfad::harness::{baseline_mismatched, convergence_csv, convergence_table, run_experiment, solve_population, ExperimentPlan};
use nfad::synthesis::generate_instance;

#[derive(Parser)]
#[command(name = "nfad", version, about = "Activity detection experiments for near-field correlated Rician channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment plan; defaults are used when omitted.
    plan: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentPlan> {
        let mut plan = match &self.plan {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentPlan::from_toml(&text)?
            }
            None => ExperimentPlan::default(),
        };
        if let Some(s) = self.seed {
            plan.seed = s;
        }
        if let Some(t) = self.trials {
            plan.trials = t;
        }
        plan.validate()?;
        Ok(plan)
    }

    fn emit(&self, text: &str) -> Result<()> {
        write_or_print(self.out.as_deref(), text)
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a detection experiment and write PM/PF summary CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write per-threshold PM/PF curves here.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Run the trace-matched scaled-identity baseline instead.
        #[arg(long)]
        mismatched: bool,
    },
    /// Tally exact vs inexact convergence over scatterer counts.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 6, 8])]
        scatterers: Vec<usize>,
    },
    /// Statistical dimension, identifiability scan and similarity checks.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Random device pairs for the similarity comparison.
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Objective trajectory of a single instance.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, curves, mismatched } => {
            let plan = common.load()?;
            let report = if mismatched { baseline_mismatched(&plan)? } else { run_experiment(&plan)? };
            for p in &report.points {
                eprintln!(
                    "value {:?}: error probability {:.4} (crossed {}), diverged {}, mean runtime {:.3}s",
                    p.value, p.error.value, p.error.crossed, p.tally.diverged, p.mean_runtime_s
                );
            }
            common.emit(&report.to_csv())?;
            if let Some(path) = curves {
                write_or_print(Some(&path), &report.curves_csv())?;
            }
        }
        Command::Convergence { common, scatterers } => {
            let plan = common.load()?;
            let rows = convergence_table(&plan, &scatterers)?;
            common.emit(&convergence_csv(&rows))?;
        }
        Command::Analyze { common, pairs } => {
            let plan = common.load()?;
            common.emit(&analyze(&plan, pairs)?)?;
        }
        Command::Trace { common, trial } => {
            let plan = common.load()?;
            if trial >= plan.trials as u64 {
                bail!("trial {trial} is outside 0..{}", plan.trials);
            }
            let (pop, signal) = generate_instance(&plan.system, plan.seed, trial)?;
            let mut rng = stream_rng(plan.seed, trial, Stream::Solver);
            let report = solve_population(&pop, &signal.y, &plan.solver, &mut rng)?;
            eprintln!("termination: {}, objective {:.6}", report.termination.label(), report.objective);
            common.emit(&report.trace_csv())?;
        }
    }
    Ok(())
}

fn analyze(plan: &ExperimentPlan, pairs: usize) -> Result<String> {
    let mut out = String::from("metric,value\n");
    let (pop, _) = generate_instance(&plan.system, plan.seed, 0)?;
    let dim = statistical_dimension(&pop, 4096)?;
    for (k, v) in [
        ("d_one", dim.d_one),
        ("d_two", dim.d_two),
        ("bound_one", dim.bound_one),
        ("bound_two", dim.bound_two),
        ("r_bar", dim.r_bar),
        ("rank_sum", dim.rank_sum),
    ] {
        writeln!(out, "{k},{v}")?;
    }
    writeln!(out, "regime,{:?}", dim.regime)?;

    let mut rng = stream_rng(plan.seed, 0, Stream::Population);
    let scan = identifiability_scan(plan.trials, 6, &mut rng);
    for (k, v) in [
        ("scan_trials", scan.trials),
        ("uncorrelated_identifiable", scan.uncorrelated_identifiable),
        ("correlated_identifiable", scan.correlated_identifiable),
        ("violations", scan.violations),
        ("converse", scan.converse),
        ("indeterminate", scan.indeterminate),
        ("cross_checked", scan.cross_checked),
        ("oracle_disagreements", scan.oracle_disagreements),
    ] {
        writeln!(out, "{k},{v}")?;
    }

    let n = pop.coords();
    if n >= 2 && pairs > 0 {
        let (mut worst, mut mean_gap) = (f64::INFINITY, 0.0);
        for _ in 0..pairs {
            let i = rng.random_range(0..n);
            let k = (i + rng.random_range(1..n)) % n;
            let (corr, uncorr) = cosine_similarity_pair(&pop, i, k)?;
            worst = worst.min(uncorr - corr);
            mean_gap += (uncorr - corr) / pairs as f64;
        }
        writeln!(out, "similarity_pairs,{pairs}")?;
        writeln!(out, "similarity_min_slack,{worst}")?;
        writeln!(out, "similarity_mean_slack,{mean_gap}")?;
    }
    Ok(out)
}
