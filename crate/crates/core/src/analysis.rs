//! Statistical dimensions, identifiability of the true activity and the
//! pairwise cosine similarity of covariance signatures.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{ChannelStats, Correlation};
use crate::linalg::{c, hermitian_eigen, kron, CMat, CVec};
use crate::synthesis::{complex_normal, sequences_from_rng, DevicePopulation};

/// Relative eigenvalue cutoff for numerical rank.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `D̄_I < D̄_II`.
    Reduced,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionReport {
    pub d_one: usize,
    pub d_two: usize,
    pub bound_one: usize,
    pub bound_two: usize,
    /// `max rank R_n`.
    pub r_bar: usize,
    /// `Σ rank R_n`.
    pub rank_sum: usize,
    pub regime: Regime,
}

fn numerical_rank(m: &CMat) -> usize {
    let (vals, _) = hermitian_eigen(m);
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > RANK_TOL * top).count()
}

fn corr_rank(ch: &ChannelStats) -> usize {
    match &ch.correlation {
        Correlation::LowRank(_) => numerical_rank(&ch.corr_matrix()),
        Correlation::ScaledIdentity(g) => {
            if *g > 0.0 {
                ch.antennas()
            } else {
                0
            }
        }
    }
}

/// `D_I = rank Σ R_n ⊗ s_n s_nᴴ`, `D_II = rank Σ g_n I ⊗ s_n s_nᴴ` with
/// their upper bounds. Refuses `LM > dense_limit`.
pub fn statistical_dimension(pop: &DevicePopulation, dense_limit: usize) -> Result<DimensionReport> {
    let (l, m) = (pop.seq_len, pop.antennas);
    let lm = l * m;
    if lm > dense_limit {
        return Err(Error::TooLarge(format!("LM = {lm} exceeds the dense limit {dense_limit}")));
    }
    let mut one = CMat::zeros(lm, lm);
    let mut two = CMat::zeros(lm, lm);
    for i in 0..pop.coords() {
        let s = pop.sequence(i);
        let ss = s * s.adjoint();
        let ch = pop.channel(i);
        one += kron(&ch.corr_matrix(), &ss);
        two += kron(&CMat::identity(m, m), &ss) * c(ch.large_scale_gain(), 0.0);
    }
    let ranks: Vec<usize> = (0..pop.coords()).map(|i| corr_rank(pop.channel(i))).collect();
    let r_bar = ranks.iter().copied().max().unwrap_or(0);
    let n = pop.coords();
    let bound_one = (r_bar * n).min(lm);
    let bound_two = (m * n).min(lm);
    Ok(DimensionReport {
        d_one: numerical_rank(&one),
        d_two: numerical_rank(&two),
        bound_one,
        bound_two,
        r_bar,
        rank_sum: ranks.iter().sum(),
        regime: if bound_one < bound_two { Regime::Reduced } else { Regime::Equal },
    })
}

/// Realified constraint columns for both channel models plus cone signs.
#[derive(Debug, Clone)]
pub struct IdentifiabilityInstance {
    /// Columns `vec(R_n ⊗ s_n s_nᴴ)` stacked as `[Re; Im]`.
    pub psi_one: DMatrix<f64>,
    /// Columns `vec(g_n I ⊗ s_n s_nᴴ)`.
    pub psi_two: DMatrix<f64>,
    /// Columns `h̄_n ⊗ s_n`.
    pub mean_stack: DMatrix<f64>,
    /// `+1` where the true activity is 0, `−1` where it is 1.
    pub signs: Vec<f64>,
}

fn realify_columns(cols: &[CVec]) -> DMatrix<f64> {
    let rows = cols.first().map(|v| v.len()).unwrap_or(0);
    DMatrix::from_fn(2 * rows, cols.len(), |r, j| {
        if r < rows {
            cols[j][r].re
        } else {
            cols[j][r - rows].im
        }
    })
}

impl IdentifiabilityInstance {
    pub fn new(pop: &DevicePopulation, active: &[bool]) -> Result<Self> {
        if active.len() != pop.coords() {
            return Err(Error::Dimension("activity length does not match coordinates".into()));
        }
        let m = pop.antennas;
        let mut one = Vec::new();
        let mut two = Vec::new();
        let mut mean = Vec::new();
        for i in 0..pop.coords() {
            let s = pop.sequence(i);
            let ss = s * s.adjoint();
            let ch = pop.channel(i);
            let a = kron(&ch.corr_matrix(), &ss);
            let b = kron(&CMat::identity(m, m), &ss) * c(ch.large_scale_gain(), 0.0);
            one.push(CVec::from_column_slice(a.as_slice()));
            two.push(CVec::from_column_slice(b.as_slice()));
            mean.push(pop.mean_component(i));
        }
        Ok(Self {
            psi_one: realify_columns(&one),
            psi_two: realify_columns(&two),
            mean_stack: realify_columns(&mean),
            signs: active.iter().map(|&a| if a { -1.0 } else { 1.0 }).collect(),
        })
    }

    /// Stacked equality system for the chosen model.
    pub fn system(&self, correlated: bool) -> DMatrix<f64> {
        let psi = if correlated { &self.psi_one } else { &self.psi_two };
        let n = psi.ncols();
        let mut out = DMatrix::zeros(psi.nrows() + self.mean_stack.nrows(), n);
        out.rows_mut(0, psi.nrows()).copy_from(psi);
        out.rows_mut(psi.nrows(), self.mean_stack.nrows()).copy_from(&self.mean_stack);
        out
    }
}

/// Orthonormal basis of the numerical null space of `a` (columns).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Gram route keeps the SVD square and small; the cutoff is applied to
    // singular values, i.e. square roots of the Gram eigenvalues.
    let gram = a.transpose() * a;
    let eig = gram.symmetric_eigen();
    let sv: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    let top = sv.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&j| top == 0.0 || sv[j] <= 1e-7 * top).collect();
    DMatrix::from_fn(n, keep.len(), |r, k| eig.eigenvectors[(r, keep[k])])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Identifiability {
    Identifiable,
    /// A nonzero `x` in the null space and the sign cone, scaled to `|x| ≤ 1`.
    NotIdentifiable { witness: Vec<f64> },
    Indeterminate(String),
}

impl Identifiability {
    pub fn holds(&self) -> Option<bool> {
        match self {
            Identifiability::Identifiable => Some(true),
            Identifiability::NotIdentifiable { .. } => Some(false),
            Identifiability::Indeterminate(_) => None,
        }
    }
}

/// Optimum of `Σ z` below this counts as zero.
pub const LP_TOL: f64 = 1e-7;

/// Decide whether the null space meets the sign cone only at 0.
///
/// With `x = W t` over a null-space basis `W`, maximise `Σ σ_n x_n`
/// subject to `0 ≤ σ_n x_n ≤ 1`.
pub fn identifiability_holds(inst: &IdentifiabilityInstance, correlated: bool) -> Identifiability {
    let w = null_space(&inst.system(correlated));
    let (n, k) = (w.nrows(), w.ncols());
    if k == 0 {
        return Identifiability::Identifiable;
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let obj: Vec<f64> = (0..k).map(|j| (0..n).map(|i| inst.signs[i] * w[(i, j)]).sum()).collect();
    let vars: Vec<_> = obj.iter().map(|&o| lp.add_var(o, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for i in 0..n {
        let mut e = LinearExpr::empty();
        for (j, v) in vars.iter().enumerate() {
            e.add(*v, inst.signs[i] * w[(i, j)]);
        }
        lp.add_constraint(e.clone(), ComparisonOp::Ge, 0.0);
        lp.add_constraint(e, ComparisonOp::Le, 1.0);
    }
    match lp.solve() {
        Ok(sol) => {
            if sol.objective() > LP_TOL {
                let t: Vec<f64> = vars.iter().map(|v| *sol.var_value(*v)).collect();
                let witness = (0..n).map(|i| (0..k).map(|j| w[(i, j)] * t[j]).sum()).collect();
                Identifiability::NotIdentifiable { witness }
            } else {
                Identifiability::Identifiable
            }
        }
        Err(e) => Identifiability::Indeterminate(e.to_string()),
    }
}

/// Enumerate supports: the cone `{z ≥ 0 : A·diag(σ)·z = 0}` is nontrivial
/// iff some support carries a one-dimensional null space spanned by a
/// strictly one-signed vector (an extreme ray).
pub fn identifiability_brute_force(inst: &IdentifiabilityInstance, correlated: bool) -> Result<bool> {
    let a = inst.system(correlated);
    let n = a.ncols();
    if n > 16 {
        return Err(Error::TooLarge("brute-force oracle limited to 16 coordinates".into()));
    }
    let b = DMatrix::from_fn(a.nrows(), n, |r, j| a[(r, j)] * inst.signs[j]);
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let sub = DMatrix::from_fn(b.nrows(), cols.len(), |r, k| b[(r, cols[k])]);
        let w = null_space(&sub);
        if w.ncols() != 1 {
            continue;
        }
        let v = w.column(0);
        let scale = v.amax();
        if v.iter().all(|x| *x > 1e-6 * scale) || v.iter().all(|x| *x < -1e-6 * scale) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanReport {
    pub trials: usize,
    /// Instances where the uncorrelated test passed.
    pub uncorrelated_identifiable: usize,
    pub correlated_identifiable: usize,
    /// Uncorrelated identifiable but correlated not: must stay 0.
    pub violations: usize,
    /// Correlated identifiable while uncorrelated is not.
    pub converse: usize,
    pub indeterminate: usize,
    /// LP decisions checked against enumeration, and how many disagreed.
    pub cross_checked: usize,
    pub oracle_disagreements: usize,
}

/// Small random instance: `N ≤ 8`, `L ≤ 4`, `M ≤ 4`, random ranks, optional means.
pub fn random_small_instance<R: Rng + ?Sized>(rng: &mut R) -> (DevicePopulation, Vec<bool>) {
    let n = rng.random_range(2..=8);
    let l = rng.random_range(1..=4);
    let m = rng.random_range(2..=4);
    let with_mean = rng.random_bool(0.3);
    let channels = (0..n)
        .map(|_| {
            let r = rng.random_range(1..=m);
            let f = CMat::from_fn(m, r, |_, _| complex_normal(rng, 1.0));
            let los = if with_mean { CVec::from_fn(m, |_, _| complex_normal(rng, 0.5)) } else { CVec::zeros(m) };
            ChannelStats { los_mean: los, correlation: Correlation::LowRank(f) }
        })
        .collect();
    let sigs = sequences_from_rng(rng, n, l, 1);
    let pop = DevicePopulation::new(channels, sigs, l, 1.0).expect("consistent instance");
    let k = rng.random_range(0..=n);
    let mut active = vec![false; n];
    for i in rand::seq::index::sample(rng, n, k) {
        active[i] = true;
    }
    (pop, active)
}

/// Check "uncorrelated identifiable ⇒ correlated identifiable" on random
/// instances; LP answers are cross-checked by enumeration for `N ≤ oracle_n`.
pub fn identifiability_scan<R: Rng + ?Sized>(trials: usize, oracle_n: usize, rng: &mut R) -> ScanReport {
    let mut rep = ScanReport { trials, ..Default::default() };
    for _ in 0..trials {
        let (pop, active) = random_small_instance(rng);
        let inst = IdentifiabilityInstance::new(&pop, &active).expect("matching lengths");
        let two = identifiability_holds(&inst, false).holds();
        let one = identifiability_holds(&inst, true).holds();
        let (Some(two), Some(one)) = (two, one) else {
            rep.indeterminate += 1;
            continue;
        };
        rep.uncorrelated_identifiable += two as usize;
        rep.correlated_identifiable += one as usize;
        if two && !one {
            rep.violations += 1;
        }
        if one && !two {
            rep.converse += 1;
        }
        if pop.coords() <= oracle_n {
            for (corr, lp) in [(false, two), (true, one)] {
                rep.cross_checked += 1;
                if identifiability_brute_force(&inst, corr).ok() != Some(lp) {
                    rep.oracle_disagreements += 1;
                }
            }
        }
    }
    rep
}

/// `(corr, uncorr)` cosine similarities of the covariance signatures of
/// coordinates `n` and `k`.
pub fn cosine_similarity_pair(pop: &DevicePopulation, n: usize, k: usize) -> Result<(f64, f64)> {
    if n == k {
        return Err(Error::Config("cosine similarity needs two distinct coordinates".into()));
    }
    let rn = pop.channel(n).corr_matrix();
    let rk = pop.channel(k).corr_matrix();
    let (sn, sk) = (pop.sequence(n), pop.sequence(k));
    let norms = [rn.norm(), rk.norm(), sn.norm(), sk.norm()];
    if norms.iter().any(|v| *v == 0.0) {
        return Err(Error::Numerical("zero-norm correlation or sequence".into()));
    }
    let seq = (sn.dotc(sk).norm() / (norms[2] * norms[3])).powi(2);
    let tr = (&rn * &rk).trace().re;
    Ok((tr / (norms[0] * norms[1]) * seq, seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_rank;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop_from(chans: Vec<ChannelStats>, seqs: Vec<Vec<(f64, f64)>>) -> DevicePopulation {
        let l = seqs[0].len();
        let sigs = crate::synthesis::SignatureSet {
            per_device: 1,
            sequences: seqs.into_iter().map(|s| CVec::from_iterator(l, s.into_iter().map(|(a, b)| c(a, b)))).collect(),
        };
        DevicePopulation::new(chans, sigs, l, 1.0).unwrap()
    }

    fn rank_one(v: &[(f64, f64)]) -> ChannelStats {
        let m = v.len();
        ChannelStats {
            los_mean: CVec::zeros(m),
            correlation: Correlation::LowRank(CMat::from_iterator(m, 1, v.iter().map(|&(a, b)| c(a, b)))),
        }
    }

    #[test]
    fn rank_one_pair_has_reduced_dimension() {
        let pop = pop_from(
            vec![rank_one(&[(1.0, 0.0), (0.5, 0.5)]), rank_one(&[(0.2, -1.0), (1.0, 0.0)])],
            vec![vec![(1.0, 0.0), (0.0, 1.0)], vec![(1.0, 0.0), (-1.0, 0.0)]],
        );
        let d = statistical_dimension(&pop, 64).unwrap();
        assert!(d.d_one <= 2);
        assert_eq!(d.d_two, 4);
        assert_eq!(d.bound_one, 2);
        assert_eq!(d.regime, Regime::Reduced);
    }

    #[test]
    fn far_field_population_has_equal_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chans = (0..4)
            .map(|_| ChannelStats { los_mean: CVec::zeros(3), correlation: Correlation::ScaledIdentity(rng.random_range(0.1..1.0)) })
            .collect();
        let sigs = sequences_from_rng(&mut rng, 4, 3, 1);
        let pop = DevicePopulation::new(chans, sigs, 3, 1.0).unwrap();
        let d = statistical_dimension(&pop, 64).unwrap();
        assert_eq!(d.d_one, d.d_two);
    }

    #[test]
    fn dimension_matches_stacked_factor_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let (pop, _) = random_small_instance(&mut rng);
            let d = statistical_dimension(&pop, 64).unwrap();
            let blocks: Vec<CMat> = (0..pop.coords()).map(|i| pop.x_matrix(i)).collect();
            let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut stacked = CMat::zeros(pop.dim(), cols);
            let mut at = 0;
            for b in &blocks {
                stacked.columns_mut(at, b.ncols()).copy_from(b);
                at += b.ncols();
            }
            assert_eq!(d.d_one, matrix_rank(&stacked, RANK_TOL));
            assert!(d.d_one <= d.rank_sum && d.rank_sum <= d.r_bar * pop.coords());
        }
    }

    #[test]
    fn dense_limit_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pop, _) = random_small_instance(&mut rng);
        assert!(matches!(statistical_dimension(&pop, 1), Err(Error::TooLarge(_))));
    }

    #[test]
    fn single_device_is_identifiable() {
        let pop = pop_from(vec![rank_one(&[(1.0, 0.0), (0.0, 1.0)])], vec![vec![(1.0, 0.0), (0.0, -1.0)]]);
        for act in [[false], [true]] {
            let inst = IdentifiabilityInstance::new(&pop, &act).unwrap();
            assert_eq!(identifiability_holds(&inst, true), Identifiability::Identifiable);
            assert_eq!(identifiability_holds(&inst, false), Identifiability::Identifiable);
        }
    }

    #[test]
    fn duplicated_device_is_not_identifiable() {
        let v = [(1.0, 0.0), (0.3, 0.4)];
        let s = vec![(1.0, 0.0), (0.0, 1.0)];
        let mut twice = rank_one(&v);
        if let Correlation::LowRank(f) = &mut twice.correlation {
            *f *= c(2.0, 0.0);
        }
        let pop = pop_from(vec![rank_one(&v), twice], vec![s.clone(), s]);
        let inst = IdentifiabilityInstance::new(&pop, &[true, false]).unwrap();
        match identifiability_holds(&inst, true) {
            Identifiability::NotIdentifiable { witness } => {
                // x = (−4t, t): R₂ = 4R₁
                assert!(witness[0] < 0.0 && witness[1] > 0.0);
                assert!((witness[0] + 4.0 * witness[1]).abs() < 1e-8);
            }
            other => panic!("{other:?}"),
        }
        assert!(!identifiability_brute_force(&inst, true).unwrap());
    }

    #[test]
    fn lp_agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen = [0usize; 2];
        for _ in 0..60 {
            let (pop, active) = random_small_instance(&mut rng);
            if pop.coords() > 6 {
                continue;
            }
            let inst = IdentifiabilityInstance::new(&pop, &active).unwrap();
            for corr in [false, true] {
                let lp = identifiability_holds(&inst, corr).holds().unwrap();
                assert_eq!(identifiability_brute_force(&inst, corr).unwrap(), lp);
                seen[lp as usize] += 1;
            }
        }
        assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
    }

    #[test]
    fn cosine_similarity_cases() {
        let v = [(1.0, 0.0), (0.3, 0.4)];
        let pop = pop_from(
            vec![rank_one(&v), rank_one(&v), rank_one(&[(0.0, 1.0), (2.0, 0.0)])],
            vec![vec![(1.0, 0.0), (1.0, 0.0)], vec![(1.0, 0.0), (0.0, 1.0)], vec![(1.0, 0.0), (-1.0, 0.0)]],
        );
        let (a, b) = cosine_similarity_pair(&pop, 0, 1).unwrap();
        assert!((a - b).abs() < 1e-14);
        let (a, b) = cosine_similarity_pair(&pop, 0, 2).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
        assert!(cosine_similarity_pair(&pop, 1, 1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn correlated_similarity_never_exceeds_uncorrelated(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (pop, _) = random_small_instance(&mut rng);
            let (a, b) = cosine_similarity_pair(&pop, 0, 1).unwrap();
            proptest::prop_assert!(a <= b + 1e-12);
        }

        #[test]
        fn dimension_bounds_hold(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (pop, _) = random_small_instance(&mut rng);
            let d = statistical_dimension(&pop, 64).unwrap();
            let (n, l, m) = (pop.coords(), pop.seq_len, pop.antennas);
            proptest::prop_assert!(d.d_one <= d.bound_one && d.d_two <= d.bound_two);
            proptest::prop_assert!(d.d_one <= d.rank_sum && d.rank_sum <= d.r_bar * n);
            if n >= l {
                proptest::prop_assert_eq!(d.regime == Regime::Reduced, n * d.r_bar < l * m);
            }
        }
    }

    #[test]
    fn implication_scan_has_no_counterexamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = identifiability_scan(60, 6, &mut rng);
        assert_eq!(rep.violations, 0, "{rep:?}");
        assert_eq!(rep.oracle_disagreements, 0, "{rep:?}");
        assert_eq!(rep.indeterminate, 0);
    }
}
