use nfad::config::{ChannelCase, SystemConfig};
use nfad::harness::{error_probability, pm_pf_curves, run_trial, threshold_grid, ModelChoice};
use nfad::solver::SolveOptions;
use proptest::prelude::*;

fn small(channel: ChannelCase) -> SystemConfig {
    SystemConfig { antennas: 8, seq_len: 8, devices: 20, active: 3, scatterers: 3, channel, ..Default::default() }
}

fn channel() -> impl Strategy<Value = ChannelCase> {
    prop_oneof![
        Just(ChannelCase::CorrelatedRician),
        Just(ChannelCase::CorrelatedRayleigh),
        Just(ChannelCase::Uncorrelated),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trials_are_reproducible_and_feasible(seed in 0u64..1000, trial in 0u64..4, ch in channel()) {
        let cfg = small(ch);
        let opts = SolveOptions { max_sweeps: 30, ..Default::default() };
        let a = run_trial(&cfg, &opts, ModelChoice::True, seed, trial).unwrap();
        let b = run_trial(&cfg, &opts, ModelChoice::True, seed, trial).unwrap();
        prop_assert_eq!(&a.a, &b.a);
        prop_assert_eq!(&a.truth.active, &b.truth.active);
        prop_assert!(a.a.iter().all(|&x| x >= 0.0 && x.is_finite()));
        prop_assert!(!a.diverged(), "diverged: {:?}", a.termination);
        prop_assert_eq!(a.truth.active.len(), cfg.active);
    }

    #[test]
    fn error_probability_lies_between_curves(seed in 0u64..1000) {
        let cfg = small(ChannelCase::CorrelatedRician);
        let opts = SolveOptions { max_sweeps: 30, ..Default::default() };
        let outcomes: Vec<_> = (0..4).map(|t| run_trial(&cfg, &opts, ModelChoice::True, seed, t).unwrap()).collect();
        let thetas = threshold_grid(64);
        let (pm, pf) = pm_pf_curves(&outcomes, &thetas);
        let c = error_probability(&thetas, &pm, &pf).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.value));
        let lo = pm.iter().chain(&pf).cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(c.value >= lo - 1e-12);
    }
}

#[test]
fn mismatched_model_runs_on_same_instance() {
    let cfg = small(ChannelCase::CorrelatedRician);
    let opts = SolveOptions::default();
    let t = run_trial(&cfg, &opts, ModelChoice::True, 7, 0).unwrap();
    let m = run_trial(&cfg, &opts, ModelChoice::Mismatched, 7, 0).unwrap();
    assert_eq!(t.truth.active, m.truth.active);
    assert_eq!(t.a.len(), m.a.len());
}
