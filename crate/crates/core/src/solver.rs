//! Exact and inexact coordinate descent over the relaxed activity box.

use std::fmt::Write as _;
use web_time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mle::{CovarianceModel, Kernel, SpectralTerm};
use crate::poly::{cubic_real_roots, Poly};

/// Horner values of `p_den` below this magnitude are rejected.
pub const DEN_UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Exact,
    Inexact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub d: f64,
    /// Value of the one-dimensional model at `d` (rational form for exact,
    /// regularised quartic for inexact).
    pub estimate: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    RootFinder,
    NoCandidate,
}

/// Polynomials of the exact subproblem: `φ(d) = log p_den(d) + p_num(d)/p_den(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemPolys {
    pub den: Poly,
    pub num: Poly,
}

impl SubproblemPolys {
    pub fn eval(&self, d: f64) -> Option<f64> {
        let den = self.den.eval(d);
        if !(den.abs() >= DEN_UNDERFLOW) || den <= 0.0 {
            return None;
        }
        let v = den.ln() + self.num.eval(d) / den;
        v.is_finite().then_some(v)
    }

    /// `p_den p_den' + p_den p_num' − p_den' p_num`, whose real roots are
    /// the stationary points.
    pub fn stationarity(&self) -> Poly {
        let dd = self.den.derivative();
        let dn = self.num.derivative();
        self.den.mul(&dd).add(&self.den.mul(&dn)).sub(&dd.mul(&self.num))
    }
}

/// Split every eigenspace of multiplicity `m` into `m` unit terms sharing the
/// eigenvalue, so the denominator has one linear factor per dimension.
fn unit_terms(terms: &[SpectralTerm]) -> Vec<SpectralTerm> {
    let mut out = Vec::new();
    for t in terms {
        let m = t.mult as f64;
        for _ in 0..t.mult {
            out.push(SpectralTerm { lambda: t.lambda, mult: 1, c: t.c / m, e: t.e / m, g: t.g / m });
        }
    }
    out
}

pub fn build_polynomials(terms: &[SpectralTerm], alpha_re: f64, beta: f64) -> SubproblemPolys {
    let terms = unit_terms(terms);
    let factors: Vec<Poly> = terms.iter().map(|t| Poly::linear(1.0, t.lambda)).collect();
    let den = factors.iter().fold(Poly::constant(1.0), |acc, f| acc.mul(f));
    let mut num = Poly::new(vec![0.0, -2.0 * alpha_re, beta]).mul(&den);
    for (i, t) in terms.iter().enumerate() {
        let others = factors
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .fold(Poly::constant(1.0), |acc, (_, f)| acc.mul(f));
        num = num.add(&Poly::new(vec![0.0, -t.c, 2.0 * t.e, -t.g]).mul(&others));
    }
    SubproblemPolys { den, num }
}

/// Relative size below which leading stationarity coefficients are noise.
pub const LEAD_TRIM: f64 = 1e-13;

/// Minimiser of the exact subproblem over `[−a_n, 1 − a_n]`.
pub fn exact_step(kernel: &Kernel, a_n: f64) -> Result<StepResult, StepFailure> {
    let polys = build_polynomials(&kernel.spectral(), kernel.alpha.re, kernel.beta);
    let (lo, hi) = (-a_n, 1.0 - a_n);
    let roots = polys.stationarity().trimmed(LEAD_TRIM).real_roots().ok_or(StepFailure::RootFinder)?;
    let mut best: Option<(f64, f64)> = None;
    let candidates = roots.into_iter().filter(|r| *r > lo && *r < hi).chain([lo, hi]);
    for d in candidates {
        if let Some(v) = polys.eval(d) {
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((d, v));
            }
        }
    }
    let (d, estimate) = best.ok_or(StepFailure::NoCandidate)?;
    Ok(StepResult { d, estimate, kind: StepKind::Exact })
}

/// Minimiser of the quartic surrogate plus `(μ/2)d²` over `[−a_n, 1 − a_n]`.
pub fn inexact_step(kernel: &Kernel, a_n: f64, mu: f64) -> StepResult {
    let [c1, c2, c3, c4] = kernel.surrogate_coefficients();
    let c2 = c2 + 0.5 * mu;
    let q = |d: f64| ((c4 * d + c3) * d + c2) * d * d + c1 * d;
    let (lo, hi) = (-a_n, 1.0 - a_n);
    let mut best = (lo, q(lo));
    if q(hi) < best.1 {
        best = (hi, q(hi));
    }
    for r in cubic_real_roots(4.0 * c4, 3.0 * c3, 2.0 * c2, c1) {
        if r > lo && r < hi && q(r) < best.1 {
            best = (r, q(r));
        }
    }
    StepResult { d: best.0, estimate: best.1, kind: StepKind::Inexact }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub kind: StepKind,
    pub mu: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
    /// Coordinates whose kernel rank exceeds this use the inexact step.
    pub exact_rank_cap: Option<usize>,
    /// Rise of the objective within one sweep that counts as divergence.
    pub divergence_threshold: f64,
    /// `V(a)` is evaluated after sweeps whose largest `|d|` is at most this.
    pub check_below: f64,
    /// Halve steps that raise the objective, dropping them after 40 halvings.
    pub guard: bool,
    pub record_steps: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            kind: StepKind::Inexact,
            mu: 10.0,
            epsilon: 1e-3,
            max_sweeps: 50,
            exact_rank_cap: None,
            divergence_threshold: 1.0,
            check_below: 1e-2,
            guard: false,
            record_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    SweepCap,
    Diverged { sweep: usize, coordinate: Option<usize>, reason: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::SweepCap => "sweep-cap",
            Termination::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub sweep: usize,
    pub objective: f64,
    pub v_norm: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub exact_steps: usize,
    pub inexact_steps: usize,
    /// Updates with `f(a + d·e_n) > f(a) + 1e−9`, before any guard.
    pub increases: usize,
    pub largest_increase: f64,
    pub guarded: usize,
    pub recomputes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub a: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub termination: Termination,
    pub objective: f64,
    pub v_norm: Option<f64>,
    pub stats: SolveStats,
    pub steps: Vec<(usize, f64)>,
    pub elapsed_s: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("sweep,objective,v_norm,elapsed_s\n");
        for r in &self.trace {
            let v = r.v_norm.map(|v| format!("{v:.9e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.12e},{},{:.6}", r.sweep, r.objective, v, r.elapsed_s);
        }
        out
    }
}

/// Per-sweep outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepStats {
    pub max_abs_d: f64,
    pub start_objective: f64,
    pub running_objective: f64,
}

/// Tolerance on monitored one-dimensional increases.
pub const INCREASE_TOL: f64 = 1e-9;

fn choose_step(kernel: &Kernel, a_n: f64, opts: &SolveOptions) -> Result<StepResult, StepFailure> {
    let exact = opts.kind == StepKind::Exact && opts.exact_rank_cap.is_none_or(|cap| kernel.rank() <= cap);
    if exact {
        exact_step(kernel, a_n)
    } else {
        Ok(inexact_step(kernel, a_n, opts.mu))
    }
}

/// One pass over a fresh uniform permutation of all coordinates.
pub fn sweep<M: CovarianceModel, R: Rng + ?Sized>(
    model: &mut M,
    opts: &SolveOptions,
    rng: &mut R,
    sweep_index: usize,
    stats: &mut SolveStats,
    steps: &mut Vec<(usize, f64)>,
) -> Result<SweepStats, Termination> {
    let mut perm: Vec<usize> = (0..model.coords()).collect();
    perm.shuffle(rng);
    let start = model.objective();
    let mut out = SweepStats { max_abs_d: 0.0, start_objective: start, running_objective: start };
    let diverged = |i: usize, reason: &str| Termination::Diverged {
        sweep: sweep_index,
        coordinate: Some(i),
        reason: reason.to_string(),
    };
    for i in perm {
        let a_n = model.activity()[i];
        let kernel = model.kernel(i);
        let step = choose_step(&kernel, a_n, opts).map_err(|e| diverged(i, &format!("{e:?}")))?;
        match step.kind {
            StepKind::Exact => stats.exact_steps += 1,
            StepKind::Inexact => stats.inexact_steps += 1,
        }
        let mut d = step.d.clamp(-a_n, 1.0 - a_n);
        let mut change = kernel.phi(d).ok_or_else(|| diverged(i, "non-finite objective"))?;
        if change > INCREASE_TOL {
            stats.increases += 1;
            stats.largest_increase = stats.largest_increase.max(change);
            if opts.guard {
                stats.guarded += 1;
                let mut tries = 0;
                while change > 0.0 && tries < 40 {
                    d *= 0.5;
                    change = kernel.phi(d).unwrap_or(f64::INFINITY);
                    tries += 1;
                }
                if change > 0.0 {
                    d = 0.0;
                    change = 0.0;
                }
            }
        }
        if d != 0.0 {
            model.update(i, d).map_err(|e| diverged(i, &e.to_string()))?;
        }
        if opts.record_steps {
            steps.push((i, d));
        }
        out.max_abs_d = out.max_abs_d.max(d.abs());
        out.running_objective += change;
        if !out.running_objective.is_finite() {
            return Err(diverged(i, "non-finite objective"));
        }
        if out.running_objective > start + opts.divergence_threshold {
            return Err(diverged(i, "objective increase"));
        }
    }
    Ok(out)
}

/// Repeat sweeps until `‖V(a)‖₂ ≤ ε`, divergence, or the sweep cap.
pub fn solve<M: CovarianceModel, R: Rng + ?Sized>(model: &mut M, opts: &SolveOptions, rng: &mut R) -> SolveReport {
    let clock = Instant::now();
    let recomputes0 = model.recompute_count();
    let mut stats = SolveStats::default();
    let mut steps = Vec::new();
    let mut trace = vec![TraceRow { sweep: 0, objective: model.objective(), v_norm: None, elapsed_s: 0.0 }];
    let mut termination = Termination::SweepCap;
    let mut v_norm = None;
    for s in 1..=opts.max_sweeps {
        let sw = match sweep(model, opts, rng, s, &mut stats, &mut steps) {
            Ok(sw) => sw,
            Err(t) => {
                termination = t;
                break;
            }
        };
        let objective = model.objective();
        if !objective.is_finite() || objective > sw.start_objective + opts.divergence_threshold {
            termination = Termination::Diverged { sweep: s, coordinate: None, reason: "objective increase".into() };
            trace.push(TraceRow { sweep: s, objective, v_norm: None, elapsed_s: clock.elapsed().as_secs_f64() });
            break;
        }
        let mut row_v = None;
        if sw.max_abs_d <= opts.check_below || s == opts.max_sweeps {
            let v = model.optimality().norm;
            row_v = Some(v);
            v_norm = Some(v);
        }
        trace.push(TraceRow { sweep: s, objective, v_norm: row_v, elapsed_s: clock.elapsed().as_secs_f64() });
        if row_v.is_some_and(|v| v <= opts.epsilon) {
            termination = Termination::Converged;
            break;
        }
    }
    stats.recomputes = model.recompute_count() - recomputes0;
    SolveReport {
        a: model.activity().to_vec(),
        objective: model.objective(),
        trace,
        termination,
        v_norm,
        stats,
        steps,
        elapsed_s: clock.elapsed().as_secs_f64(),
    }
}

/// Apply a recorded step sequence verbatim.
pub fn replay<M: CovarianceModel>(model: &mut M, steps: &[(usize, f64)]) -> crate::Result<()> {
    for &(i, d) in steps {
        if d != 0.0 {
            model.update(i, d)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, CMat, CVec};
    use crate::mle::KernelBlock;
    use crate::synthesis::complex_normal;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng, r: usize, with_mean: bool) -> Kernel {
        let f = CMat::from_fn(r + 2, r, |_, _| complex_normal(rng, 1.0));
        let gram = f.adjoint() * &f;
        let u = CVec::from_fn(r, |_, _| complex_normal(rng, 2.0));
        let v = if with_mean { CVec::from_fn(r, |_, _| complex_normal(rng, 0.5)) } else { CVec::zeros(r) };
        let beta = if with_mean { rng.random_range(0.1..3.0) } else { 0.0 };
        let alpha = if with_mean { complex_normal(rng, 1.0) } else { Complex64::new(0.0, 0.0) };
        Kernel { blocks: vec![KernelBlock::Dense { gram, u, v }], alpha, beta }
    }

    /// A feasible `a_n` for `k`: real kernels satisfy `1 − a_n·λ_max > 0`.
    fn feasible_a(rng: &mut ChaCha8Rng, k: &Kernel) -> f64 {
        let lmax = k.spectral().iter().map(|t| t.lambda).fold(0.0, f64::max);
        rng.random_range(0.0..1.0f64).min(0.95 / lmax)
    }

    fn grid_min(k: &Kernel, lo: f64, hi: f64, h: f64) -> f64 {
        let n = ((hi - lo) / h).round() as usize;
        (0..=n).filter_map(|j| k.phi(lo + (hi - lo) * j as f64 / n as f64)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn single_eigenvalue_denominator() {
        let t = [SpectralTerm { lambda: 2.5, mult: 1, c: 0.0, e: 0.0, g: 0.0 }];
        let p = build_polynomials(&t, 0.0, 0.0);
        assert_eq!(p.den.coeffs, vec![1.0, 2.5]);
    }

    #[test]
    fn zero_kernel_reduces_to_quadratic() {
        let t = [SpectralTerm { lambda: 0.0, mult: 1, c: 1.0, e: 0.0, g: 0.0 }, SpectralTerm { lambda: 0.0, mult: 1, c: 0.5, e: 0.0, g: 0.0 }];
        let p = build_polynomials(&t, 0.25, 2.0);
        for d in [-0.4, 0.1, 0.9] {
            assert!((p.den.eval(d) - 1.0).abs() < 1e-15);
            let want = -2.0 * 0.25 * d + 2.0 * d * d - 1.5 * d;
            assert!((p.eval(d).unwrap() - want).abs() < 1e-14);
        }
        // unconstrained minimiser (0.5 + 1.5)/(2·2) = 0.5, inside the box
        let k = Kernel {
            blocks: vec![KernelBlock::Dense {
                gram: CMat::zeros(1, 1),
                u: CVec::from_vec(vec![c(2f64.sqrt(), 0.0)]),
                v: CVec::zeros(1),
            }],
            alpha: c(0.25, 0.0),
            beta: 2.0,
        };
        // quadratic: −0.5d + 2d² − 2d → minimiser 2.5/4
        let s = exact_step(&k, 0.0).unwrap();
        assert!((s.d - 0.625).abs() < 1e-10);
        let s = exact_step(&k, 0.5).unwrap();
        assert!((s.d - 0.5).abs() < 1e-12, "clipped to the upper end");
    }

    #[test]
    fn polynomial_form_matches_dense_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_kernel(&mut rng, 3, true);
        let p = build_polynomials(&k.spectral(), k.alpha.re, k.beta);
        assert_eq!(p.den.degree(), 3);
        assert_eq!(p.num.degree(), 5);
        for j in 0..20 {
            let d = -0.9 + 1.8 * j as f64 / 19.0;
            if let Some(ph) = k.phi(d) {
                assert!((p.eval(d).unwrap() - ph).abs() < 1e-7, "{d}");
            }
        }
    }

    #[test]
    fn rank_one_stationary_point_is_recovered() {
        // φ(d) = log(1 + λd) − c·d/(1 + λd) with no mean; φ' = 0 ⇒ λ(1 + λd) = c ⇒ d = (c − λ)/λ².
        let (lam, cc) = (2.0f64, 5.0f64);
        let k = Kernel {
            blocks: vec![KernelBlock::Dense {
                gram: CMat::from_element(1, 1, c(lam, 0.0)),
                u: CVec::from_element(1, c(cc.sqrt(), 0.0)),
                v: CVec::zeros(1),
            }],
            alpha: c(0.0, 0.0),
            beta: 0.0,
        };
        let want = (cc - lam) / (lam * lam);
        let p = build_polynomials(&k.spectral(), 0.0, 0.0);
        let roots = p.stationarity().real_roots().unwrap();
        assert!(roots.iter().any(|r| (r - want).abs() < 1e-10), "{roots:?}");
        let s = exact_step(&k, 0.0).unwrap();
        assert!((s.d - want).abs() < 1e-10);
    }

    #[test]
    fn exact_step_beats_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in 0..20 {
            let r = 1 + t % 6;
            let k = random_kernel(&mut rng, r, t % 2 == 0);
            let a_n = feasible_a(&mut rng, &k);
            let s = exact_step(&k, a_n).unwrap();
            assert!(s.d >= -a_n && s.d <= 1.0 - a_n);
            let got = k.phi(s.d).unwrap();
            assert!(got <= grid_min(&k, -a_n, 1.0 - a_n, 1e-4) + 1e-6, "trial {t}");
        }
    }

    /// Mean inside the range of the kernel: the top stationarity coefficient
    /// cancels and must not leave a noise root behind.
    #[test]
    fn mean_in_kernel_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in 0..30 {
            let r = 1 + t % 6;
            let f = CMat::from_fn(r + 1, r, |_, _| complex_normal(&mut rng, 1.0));
            let gram = f.adjoint() * &f;
            let w = CVec::from_fn(r, |_, _| complex_normal(&mut rng, 0.5));
            let v = &gram * &w;
            let beta = w.dotc(&v).re;
            let u = CVec::from_fn(r, |_, _| complex_normal(&mut rng, 2.0));
            let k = Kernel { blocks: vec![KernelBlock::Dense { gram, u, v }], alpha: complex_normal(&mut rng, 1.0), beta };
            let a_n = feasible_a(&mut rng, &k);
            let s = exact_step(&k, a_n).unwrap();
            let got = k.phi(s.d).unwrap();
            assert!(got <= grid_min(&k, -a_n, 1.0 - a_n, 1e-4) + 1e-6, "trial {t}");
        }
    }

    #[test]
    fn inexact_step_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_kernel(&mut rng, 2, true);
        assert!(inexact_step(&k, 0.5, 1e12).d.abs() < 1e-9);
        // pure quadratic: d = clip(−c1/(2c2 + μ))
        let k = Kernel {
            blocks: vec![KernelBlock::Dense {
                gram: CMat::zeros(1, 1),
                u: CVec::from_element(1, c(1.0, 0.0)),
                v: CVec::zeros(1),
            }],
            alpha: c(0.0, 0.0),
            beta: 1.0,
        };
        // c1 = −1, c2 = 1
        let s = inexact_step(&k, 0.0, 2.0);
        assert!((s.d - 0.25).abs() < 1e-12);
        let s = inexact_step(&k, 0.9, 0.0);
        assert!((s.d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn exact_dominates_inexact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in 0..30 {
            let k = random_kernel(&mut rng, 1 + t % 4, true);
            let a_n = feasible_a(&mut rng, &k);
            let e = exact_step(&k, a_n).unwrap();
            let i = inexact_step(&k, a_n, 10.0);
            assert!(k.phi(e.d).unwrap() <= k.phi(i.d).unwrap() + 1e-9);
        }
    }

    #[test]
    fn scalar_block_multiplicity_matches_expansion() {
        let k = Kernel {
            blocks: vec![KernelBlock::Scalar {
                k: 0.7,
                u: CVec::from_vec(vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.8, -1.0)]),
                v: CVec::from_vec(vec![c(0.2, 0.0), c(0.1, 0.1), c(-0.4, 0.3)]),
            }],
            alpha: c(0.3, 0.0),
            beta: 0.5,
        };
        let p = build_polynomials(&k.spectral(), k.alpha.re, k.beta);
        assert_eq!(p.den.degree(), 3);
        for d in [-0.5, 0.2, 0.8] {
            assert!((p.eval(d).unwrap() - k.phi(d).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn permutations_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let mut p = vec![0u8, 1, 2, 3];
            p.shuffle(&mut rng);
            *counts.entry(p).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        let mean = draws as f64 / 24.0;
        let sd = (draws as f64 * (1.0 / 24.0) * (23.0 / 24.0)).sqrt();
        for (p, n) in counts {
            assert!((n as f64 - mean).abs() <= 4.0 * sd, "{p:?}: {n}");
        }
    }

    proptest::proptest! {
        #[test]
        fn steps_stay_in_box(seed in 0u64..500, r in 1usize..5, a_n in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(&mut rng, r, seed % 2 == 0);
            let s = inexact_step(&k, a_n, 10.0);
            proptest::prop_assert!(s.d >= -a_n && s.d <= 1.0 - a_n);
            if let Ok(s) = exact_step(&k, a_n) {
                proptest::prop_assert!(s.d >= -a_n && s.d <= 1.0 - a_n);
            }
        }
    }
}
