//! Common-basis acceleration when the correlated devices share a low-rank
//! column space and every other device has `R = g·I`.
//!
//! With `U` the eigenbasis of `Σ R_n` over the correlated devices, the
//! transformed covariance `(Uᴴ ⊗ I_L) Σ_a (U ⊗ I_L)` is block diagonal: one
//! `Lr′ × Lr′` head block and `M − r′` identical `L × L` tail blocks.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Correlation;
use crate::linalg::{
    block_sequence_adjoint_times, c, dotc, hermitian_downdate, hermitian_eigen, hermitize, hpd_cholesky,
    hpd_inverse_logdet, kron, times_block_sequence, CMat, CVec,
};
use crate::mle::{CovarianceModel, Kernel, KernelBlock, UpdateInfo, CONDITION_LIMIT};
use crate::synthesis::DevicePopulation;

/// Eigenvalues below `RANK_TOL·λ_max` of the correlation sum count as zero.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LowRankBasis {
    pub u: CMat,
    pub r_prime: usize,
    /// Eigenvalues of the correlation sum, descending.
    pub eigenvalues: Vec<f64>,
    /// `Σ_{i≤r′} λ_i / Σ λ_i`.
    pub energy_fraction: f64,
    /// Set when `r′` was forced below the numerical rank.
    pub approximate: bool,
    /// `(UᴴR^{1/2})_{1:r′,·}` for correlated devices, `None` for `g·I` devices.
    pub head_factors: Vec<Option<CMat>>,
}

impl LowRankBasis {
    /// `R̂_n = F̂F̂ᴴ`.
    pub fn transformed_corr(&self, device: usize) -> Option<CMat> {
        self.head_factors[device].as_ref().map(|f| f * f.adjoint())
    }
}

fn correlation_sum(pop: &DevicePopulation) -> CMat {
    let m = pop.antennas;
    let mut sum = CMat::zeros(m, m);
    for ch in &pop.channels {
        if let Correlation::LowRank(f) = &ch.correlation {
            sum += f * f.adjoint();
        }
    }
    sum
}

fn basis_with_rank(pop: &DevicePopulation, u: CMat, eigenvalues: Vec<f64>, r_prime: usize, approximate: bool) -> LowRankBasis {
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let head: f64 = eigenvalues.iter().take(r_prime).map(|v| v.max(0.0)).sum();
    let uh = u.adjoint();
    let head_factors = pop
        .channels
        .iter()
        .map(|ch| match &ch.correlation {
            Correlation::LowRank(f) => Some((&uh * f).rows(0, r_prime).into_owned()),
            Correlation::ScaledIdentity(_) => None,
        })
        .collect();
    LowRankBasis {
        u,
        r_prime,
        eigenvalues,
        energy_fraction: if total > 0.0 { head / total } else { 1.0 },
        approximate,
        head_factors,
    }
}

/// Exact common basis; fails when the correlated devices span all of `C^M`.
pub fn build_basis(pop: &DevicePopulation) -> Result<LowRankBasis> {
    let (vals, vecs) = hermitian_eigen(&correlation_sum(pop));
    let top = vals.first().copied().unwrap_or(0.0);
    let r_prime = if top > 0.0 { vals.iter().filter(|&&v| v > RANK_TOL * top).count() } else { 0 };
    if r_prime == pop.antennas {
        return Err(Error::FullRankSum { rank: r_prime });
    }
    Ok(basis_with_rank(pop, vecs, vals, r_prime, false))
}

/// Basis cut to the leading `r_dd` eigenvectors regardless of rank.
pub fn truncate_basis(pop: &DevicePopulation, r_dd: usize) -> Result<LowRankBasis> {
    if r_dd >= pop.antennas {
        return Err(Error::Config(format!("r'' = {r_dd} must be below M = {}", pop.antennas)));
    }
    let (vals, vecs) = hermitian_eigen(&correlation_sum(pop));
    let top = vals.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 { vals.iter().filter(|&&v| v > RANK_TOL * top).count() } else { 0 };
    Ok(basis_with_rank(pop, vecs, vals, r_dd, r_dd < rank))
}

/// `y′ = (Uᴴ ⊗ I_L) y`.
pub fn transform_signal(y: &CVec, u: &CMat, seq_len: usize) -> CVec {
    let m = u.nrows();
    let ymat = CMat::from_column_slice(seq_len, m, y.as_slice());
    let out = ymat * u.map(|z| z.conj());
    CVec::from_column_slice(out.as_slice())
}

/// Population expressed in the transformed coordinates: means `Uᴴh̄`,
/// factors `UᴴR^{1/2}` (so `R′ = UᴴRU`), `g·I` left unchanged.
pub fn transform_population(pop: &DevicePopulation, u: &CMat) -> DevicePopulation {
    let uh = u.adjoint();
    let channels = pop
        .channels
        .iter()
        .map(|ch| {
            let mut t = (**ch).clone();
            t.los_mean = &uh * &ch.los_mean;
            if let Correlation::LowRank(f) = &ch.correlation {
                t.correlation = Correlation::LowRank(&uh * f);
            }
            std::sync::Arc::new(t)
        })
        .collect();
    DevicePopulation { channels, ..pop.clone() }
}

/// Transformed population and signal.
pub fn transform_problem(pop: &DevicePopulation, y: &CVec, basis: &LowRankBasis) -> (DevicePopulation, CVec) {
    (transform_population(pop, &basis.u), transform_signal(y, &basis.u, pop.seq_len))
}

/// Block-diagonal inverse state in transformed coordinates.
#[derive(Debug, Clone)]
pub struct BlockModel<'a> {
    pop: &'a DevicePopulation,
    basis: &'a LowRankBasis,
    /// Transformed means `Uᴴh̄_n`, per device.
    means: Vec<CVec>,
    y: CVec,
    pub a: Vec<f64>,
    /// `(Σ̂′)⁻¹`, `Lr′ × Lr′`.
    pub sigma_hat_inv: CMat,
    /// `(Σ̃′)⁻¹`, `L × L`.
    pub sigma_tilde_inv: CMat,
    /// `y′ − ȳ′_a`.
    pub residual: CVec,
    pub logdet: f64,
    pub recompute_every: usize,
    since_recompute: usize,
    recomputes: usize,
}

impl<'a> BlockModel<'a> {
    /// State at `a = 0` for the original-coordinate signal `y`.
    pub fn new(pop: &'a DevicePopulation, basis: &'a LowRankBasis, y: &CVec) -> Result<Self> {
        if y.len() != pop.dim() {
            return Err(Error::Dimension(format!("y has length {}, expected {}", y.len(), pop.dim())));
        }
        let (l, m, rp) = (pop.seq_len, pop.antennas, basis.r_prime);
        let uh = basis.u.adjoint();
        let y_t = transform_signal(y, &basis.u, l);
        let s2 = pop.noise_power;
        Ok(Self {
            pop,
            basis,
            means: pop.channels.iter().map(|ch| &uh * &ch.los_mean).collect(),
            residual: y_t.clone(),
            y: y_t,
            a: vec![0.0; pop.coords()],
            sigma_hat_inv: CMat::from_diagonal_element(l * rp, l * rp, c(1.0 / s2, 0.0)),
            sigma_tilde_inv: CMat::from_diagonal_element(l, l, c(1.0 / s2, 0.0)),
            logdet: (l * m) as f64 * s2.ln(),
            recompute_every: 10 * pop.coords().max(1),
            since_recompute: 0,
            recomputes: 0,
        })
    }

    fn l(&self) -> usize {
        self.pop.seq_len
    }

    fn r_prime(&self) -> usize {
        self.basis.r_prime
    }

    fn head(&self) -> usize {
        self.l() * self.r_prime()
    }

    /// `ξᴴ(Σ′)⁻¹η` from the head block and the shared tail block.
    pub fn block_quadratic_form(&self, xi: &CVec, eta: &CVec) -> Complex64 {
        let (l, h) = (self.l(), self.head());
        let mut acc = Complex64::new(0.0, 0.0);
        if h > 0 {
            let eh = &self.sigma_hat_inv * eta.rows(0, h);
            acc += xi.rows(0, h).dotc(&eh);
        }
        for m in self.r_prime()..self.pop.antennas {
            let et = &self.sigma_tilde_inv * eta.rows(m * l, l);
            acc += xi.rows(m * l, l).dotc(&et);
        }
        acc
    }

    /// `Σ̃⁻¹s`, `sᴴΣ̃⁻¹s` and `s̃ᴴr_m` for every tail slice.
    fn tail_terms(&self, s: &CVec) -> (CVec, f64, Vec<Complex64>) {
        let l = self.l();
        let zt = &self.sigma_tilde_inv * s;
        let kappa = s.dotc(&zt).re;
        let w = (self.r_prime()..self.pop.antennas)
            .map(|m| dotc(zt.as_slice(), &self.residual.as_slice()[m * l..(m + 1) * l]))
            .collect();
        (zt, kappa, w)
    }

    fn device(&self, i: usize) -> usize {
        i / self.pop.per_device
    }

    fn dense_blocks(&self) -> Result<(CMat, f64, CMat, f64)> {
        let (l, rp) = (self.l(), self.r_prime());
        let s2 = self.pop.noise_power;
        let mut hat = CMat::from_diagonal_element(l * rp, l * rp, c(s2, 0.0));
        let mut tilde = CMat::from_diagonal_element(l, l, c(s2, 0.0));
        for (i, &ai) in self.a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let s = self.pop.sequence(i);
            let ss = s * s.adjoint();
            match &self.basis.head_factors[self.device(i)] {
                Some(f) => hat += kron(&(f * f.adjoint()), &ss) * c(ai, 0.0),
                None => {
                    let g = self.pop.channel(i).large_scale_gain();
                    if rp > 0 {
                        hat += kron(&CMat::identity(rp, rp), &ss) * c(ai * g, 0.0);
                    }
                    tilde += ss * c(ai * g, 0.0);
                }
            }
        }
        let (hat_inv, hat_ld) = if rp > 0 {
            hpd_inverse_logdet(&hat).ok_or_else(|| Error::Numerical("head block lost definiteness".into()))?
        } else {
            (CMat::zeros(0, 0), 0.0)
        };
        let (tilde_inv, tilde_ld) =
            hpd_inverse_logdet(&tilde).ok_or_else(|| Error::Numerical("tail block lost definiteness".into()))?;
        Ok((hat_inv, hat_ld, tilde_inv, tilde_ld))
    }

    /// Head Woodbury with `B` (`Lr′ × k`) and kernel `K`; `None` when the
    /// inner matrix is too badly conditioned.
    fn head_downdate(&mut self, b: &CMat, k: &CMat, d: f64) -> Option<f64> {
        let r = k.nrows();
        if r == 0 {
            return Some(0.0);
        }
        let inner = CMat::identity(r, r) + k * c(d, 0.0);
        let chol = hpd_cholesky(&inner)?;
        let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|z| z.re).collect();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if (hi / lo).powi(2) > CONDITION_LIMIT {
            return None;
        }
        let core = hermitize(&(chol.inverse() * c(d, 0.0)));
        hermitian_downdate(&mut self.sigma_hat_inv, b, &core);
        Some(2.0 * diag.iter().map(|x| x.ln()).sum::<f64>())
    }
}

impl CovarianceModel for BlockModel<'_> {
    fn coords(&self) -> usize {
        self.a.len()
    }

    fn activity(&self) -> &[f64] {
        &self.a
    }

    fn kernel(&mut self, i: usize) -> Kernel {
        let (rp, h) = (self.r_prime(), self.head());
        let s = self.pop.sequence(i);
        let hbar = &self.means[self.device(i)];
        let hbar_head = hbar.rows(0, rp).into_owned();
        let hbar_tail = &hbar.as_slice()[rp..];
        let (g_head, w_head) = if rp > 0 {
            let z = times_block_sequence(&self.sigma_hat_inv, s, rp);
            (block_sequence_adjoint_times(&z, s, rp), z.adjoint() * self.residual.rows(0, h))
        } else {
            (CMat::zeros(0, 0), CVec::zeros(0))
        };
        let (_, kappa, w_tail) = self.tail_terms(s);
        let gh = &g_head * &hbar_head;
        let head_alpha = if rp > 0 { w_head.dotc(&hbar_head) } else { Complex64::new(0.0, 0.0) };
        let head_beta = if rp > 0 { hbar_head.dotc(&gh).re } else { 0.0 };
        let tail_alpha: Complex64 = w_tail.iter().zip(hbar_tail).map(|(w, hm)| w.conj() * hm).sum();
        let tail_beta = kappa * hbar_tail.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let alpha = head_alpha + tail_alpha;
        let beta = head_beta + tail_beta;
        let blocks = match &self.basis.head_factors[self.device(i)] {
            Some(f) => {
                let fh = f.adjoint();
                vec![KernelBlock::Dense { gram: &fh * &g_head * f, u: &fh * &w_head, v: &fh * &gh }]
            }
            None => {
                let g = self.pop.channel(i).large_scale_gain();
                let sq = c(g.sqrt(), 0.0);
                let mut blocks = Vec::with_capacity(2);
                if rp > 0 {
                    blocks.push(KernelBlock::Dense { gram: &g_head * c(g, 0.0), u: &w_head * sq, v: &gh * sq });
                }
                blocks.push(KernelBlock::Scalar {
                    k: g * kappa,
                    u: CVec::from_iterator(w_tail.len(), w_tail.iter().map(|w| w * sq)),
                    v: CVec::from_iterator(hbar_tail.len(), hbar_tail.iter().map(|hm| hm * sq * kappa)),
                });
                blocks
            }
        };
        Kernel { blocks, alpha, beta }
    }

    fn update(&mut self, i: usize, d: f64) -> Result<UpdateInfo> {
        if d == 0.0 {
            return Ok(UpdateInfo::default());
        }
        let (l, rp, m) = (self.l(), self.r_prime(), self.pop.antennas);
        let s = self.pop.sequence(i).clone();
        let z = if rp > 0 { times_block_sequence(&self.sigma_hat_inv, &s, rp) } else { CMat::zeros(0, 0) };
        let g_head = if rp > 0 { block_sequence_adjoint_times(&z, &s, rp) } else { CMat::zeros(0, 0) };
        let mut change = 0.0;
        let mut healthy = true;
        match self.basis.head_factors[self.device(i)].clone() {
            Some(f) => {
                let k = f.adjoint() * &g_head * &f;
                match self.head_downdate(&(&z * &f), &k, d) {
                    Some(ld) => change += ld,
                    None => healthy = false,
                }
            }
            None => {
                let g = self.pop.channel(i).large_scale_gain();
                if rp > 0 {
                    match self.head_downdate(&(&z * c(g.sqrt(), 0.0)), &(&g_head * c(g, 0.0)), d) {
                        Some(ld) => change += ld,
                        None => healthy = false,
                    }
                }
                let zt = &self.sigma_tilde_inv * &s;
                let kappa = s.dotc(&zt).re;
                let den = 1.0 + d * g * kappa;
                if healthy && den > 0.0 && den.is_finite() {
                    let outer = &zt * zt.adjoint() * c(d * g / den, 0.0);
                    self.sigma_tilde_inv -= outer;
                    self.sigma_tilde_inv = hermitize(&self.sigma_tilde_inv);
                    change += (m - rp) as f64 * den.ln();
                } else {
                    healthy = false;
                }
            }
        }
        self.a[i] += d;
        let hbar = &self.means[self.device(i)];
        for mm in 0..m {
            let hm = hbar[mm] * d;
            for j in 0..l {
                self.residual[mm * l + j] -= hm * s[j];
            }
        }
        self.since_recompute += 1;
        if !healthy || self.since_recompute >= self.recompute_every {
            let before = self.logdet;
            self.recompute()?;
            return Ok(UpdateInfo { logdet_change: self.logdet - before, recomputed: true });
        }
        self.logdet += change;
        Ok(UpdateInfo { logdet_change: change, recomputed: false })
    }

    fn objective(&self) -> f64 {
        self.logdet + self.block_quadratic_form(&self.residual, &self.residual).re
    }

    fn recompute(&mut self) -> Result<()> {
        let (hat_inv, hat_ld, tilde_inv, tilde_ld) = self.dense_blocks()?;
        self.sigma_hat_inv = hat_inv;
        self.sigma_tilde_inv = tilde_inv;
        self.logdet = hat_ld + (self.pop.antennas - self.r_prime()) as f64 * tilde_ld;
        let (l, m) = (self.l(), self.pop.antennas);
        let mut r = self.y.clone();
        for (i, &ai) in self.a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let s = self.pop.sequence(i);
            let hbar = &self.means[self.device(i)];
            for mm in 0..m {
                for j in 0..l {
                    r[mm * l + j] -= hbar[mm] * s[j] * ai;
                }
            }
        }
        self.residual = r;
        self.since_recompute = 0;
        self.recomputes += 1;
        Ok(())
    }

    fn reset(&mut self, a: &[f64]) -> Result<()> {
        if a.len() != self.a.len() {
            return Err(Error::Dimension("activity length mismatch".into()));
        }
        self.a = a.to_vec();
        self.recompute()
    }

    fn recompute_count(&self) -> usize {
        self.recomputes
    }
}

/// Approximate solve on a truncated basis, then a full solve warm-started
/// from its activity.
pub fn warm_start_solve<R: rand::Rng + ?Sized>(
    pop: &DevicePopulation,
    y: &CVec,
    r_dd: usize,
    opts: &crate::solver::SolveOptions,
    rng: &mut R,
) -> Result<(crate::solver::SolveReport, crate::solver::SolveReport)> {
    let basis = truncate_basis(pop, r_dd)?;
    let mut block = BlockModel::new(pop, &basis, y)?;
    let first = crate::solver::solve(&mut block, opts, rng);
    let mut full = crate::mle::FullModel::new(pop, y)?;
    full.reset(&first.a)?;
    let second = crate::solver::solve(&mut full, opts, rng);
    Ok((first, second))
}
