//! Relaxed maximum-likelihood objective, gradient, optimality measure and
//! the full `LM × LM` inverse-covariance state with low-rank updates.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Correlation;
use crate::linalg::{
    block_sequence_adjoint_times, c, hermitian_downdate, hermitian_eigen, hermitize, hpd_cholesky, hpd_inverse_logdet,
    times_block_sequence, CMat, CVec,
};
use crate::synthesis::{covariance_matrix, mean_vector, DevicePopulation};

/// Condition estimate of `I + d·K` above which an update is refused in
/// favour of a dense recompute.
pub const CONDITION_LIMIT: f64 = 1e12;

/// One diagonal block of the coordinate kernel `K = XᴴΣ⁻¹X` with the
/// matching pieces of `u = XᴴΣ⁻¹r` and `v = XᴴΣ⁻¹(h̄ ⊗ s)`.
#[derive(Debug, Clone)]
pub enum KernelBlock {
    Dense { gram: CMat, u: CVec, v: CVec },
    /// `gram = k·I`.
    Scalar { k: f64, u: CVec, v: CVec },
}

/// Everything the one-dimensional subproblem of a coordinate depends on.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub blocks: Vec<KernelBlock>,
    /// `rᴴΣ⁻¹(h̄ ⊗ s)`
    pub alpha: Complex64,
    /// `(h̄ ⊗ s)ᴴΣ⁻¹(h̄ ⊗ s)`
    pub beta: f64,
}

/// Eigen-direction of the kernel with multiplicity `mult` and the rotated
/// products `c = |ū|²`, `e = Re(ū* v̄)`, `g = |v̄|²` summed over the
/// eigenspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTerm {
    pub lambda: f64,
    pub mult: usize,
    pub c: f64,
    pub e: f64,
    pub g: f64,
}

impl Kernel {
    pub fn rank(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                KernelBlock::Dense { gram, .. } => gram.nrows(),
                KernelBlock::Scalar { u, .. } => u.len(),
            })
            .sum()
    }

    pub fn trace(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| match b {
                KernelBlock::Dense { gram, .. } => gram.trace().re,
                KernelBlock::Scalar { k, u, .. } => k * u.len() as f64,
            })
            .sum()
    }

    /// Partial derivative of the objective along this coordinate.
    pub fn gradient(&self) -> f64 {
        let u2: f64 = self
            .blocks
            .iter()
            .map(|b| match b {
                KernelBlock::Dense { u, .. } | KernelBlock::Scalar { u, .. } => u.norm_squared(),
            })
            .sum();
        self.trace() - u2 - 2.0 * self.alpha.re
    }

    /// Coefficients `[c1, c2, c3, c4]` of the quartic surrogate
    /// `c1·d + c2·d² + c3·d³ + c4·d⁴` of `f(a + d·e_i) − f(a)`: the log-det
    /// term is replaced by `d·tr K` and the inverse `(I + dK)⁻¹` by `I − dK`.
    pub fn surrogate_coefficients(&self) -> [f64; 4] {
        let mut tr = 0.0;
        let (mut uu, mut uku, mut uv, mut ukv, mut vv, mut vkv) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for b in &self.blocks {
            match b {
                KernelBlock::Dense { gram, u, v } => {
                    let ku = gram * u;
                    let kv = gram * v;
                    tr += gram.trace().re;
                    uu += u.norm_squared();
                    uku += u.dotc(&ku).re;
                    uv += u.dotc(v).re;
                    ukv += u.dotc(&kv).re;
                    vv += v.norm_squared();
                    vkv += v.dotc(&kv).re;
                }
                KernelBlock::Scalar { k, u, v } => {
                    tr += k * u.len() as f64;
                    let (a, b2, ab) = (u.norm_squared(), v.norm_squared(), u.dotc(v).re);
                    uu += a;
                    uku += k * a;
                    uv += ab;
                    ukv += k * ab;
                    vv += b2;
                    vkv += k * b2;
                }
            }
        }
        [
            tr - uu - 2.0 * self.alpha.re,
            self.beta + uku + 2.0 * uv,
            -2.0 * ukv - vv,
            vkv,
        ]
    }

    /// Eigen-decomposition of every block; negative eigenvalues are clamped to 0.
    pub fn spectral(&self) -> Vec<SpectralTerm> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match b {
                KernelBlock::Dense { gram, u, v } => {
                    let (vals, vecs) = hermitian_eigen(gram);
                    let ub = vecs.adjoint() * u;
                    let vb = vecs.adjoint() * v;
                    for (i, &lam) in vals.iter().enumerate() {
                        out.push(SpectralTerm {
                            lambda: lam.max(0.0),
                            mult: 1,
                            c: ub[i].norm_sqr(),
                            e: (ub[i].conj() * vb[i]).re,
                            g: vb[i].norm_sqr(),
                        });
                    }
                }
                KernelBlock::Scalar { k, u, v } => {
                    if u.is_empty() {
                        continue;
                    }
                    out.push(SpectralTerm {
                        lambda: k.max(0.0),
                        mult: u.len(),
                        c: u.norm_squared(),
                        e: u.dotc(v).re,
                        g: v.norm_squared(),
                    });
                }
            }
        }
        out
    }

    /// `f(a + d·e_i) − f(a)` evaluated through Cholesky factors of `I + d·K`.
    ///
    /// Returns `None` when `I + d·K` is not positive definite.
    pub fn phi(&self, d: f64) -> Option<f64> {
        let mut total = -2.0 * d * self.alpha.re + d * d * self.beta;
        for b in &self.blocks {
            match b {
                KernelBlock::Dense { gram, u, v } => {
                    let n = gram.nrows();
                    let a = CMat::identity(n, n) + gram * c(d, 0.0);
                    let chol = hpd_cholesky(&a)?;
                    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
                    let au = chol.solve(u);
                    let av = chol.solve(v);
                    total += logdet - d * u.dotc(&au).re + 2.0 * d * d * u.dotc(&av).re
                        - d * d * d * v.dotc(&av).re;
                }
                KernelBlock::Scalar { k, u, v } => {
                    let den = 1.0 + d * k;
                    if !(den > 0.0) {
                        return None;
                    }
                    total += u.len() as f64 * den.ln()
                        + (-d * u.norm_squared() + 2.0 * d * d * u.dotc(v).re - d * d * d * v.norm_squared()) / den;
                }
            }
        }
        total.is_finite().then_some(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub v: Vec<f64>,
    pub norm: f64,
}

/// `|Proj_[0,1](a − g) − a|` coordinate-wise.
pub fn optimality_from_gradient(a: &[f64], grad: &[f64]) -> OptimalityReport {
    let v: Vec<f64> = a
        .iter()
        .zip(grad)
        .map(|(&ai, &gi)| ((ai - gi).clamp(0.0, 1.0) - ai).abs())
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    OptimalityReport { v, norm }
}

/// Bookkeeping returned by an inverse update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateInfo {
    pub logdet_change: f64,
    pub recomputed: bool,
}

/// Inverse-covariance state that the coordinate-descent solvers drive.
pub trait CovarianceModel {
    fn coords(&self) -> usize;
    fn activity(&self) -> &[f64];
    /// Kernel of coordinate `i` at the current state.
    fn kernel(&mut self, i: usize) -> Kernel;
    /// Apply `a_i ← a_i + d` and update the inverse, log-determinant and residual.
    fn update(&mut self, i: usize, d: f64) -> Result<UpdateInfo>;
    /// `log|Σ_a| + rᴴΣ_a⁻¹r` from the maintained quantities.
    fn objective(&self) -> f64;
    /// Rebuild every maintained quantity from `a` densely.
    fn recompute(&mut self) -> Result<()>;
    /// Replace `a` and rebuild.
    fn reset(&mut self, a: &[f64]) -> Result<()>;
    fn recompute_count(&self) -> usize;

    fn gradient_entry(&mut self, i: usize) -> f64 {
        self.kernel(i).gradient()
    }

    fn optimality(&mut self) -> OptimalityReport {
        let grad: Vec<f64> = (0..self.coords()).map(|i| self.gradient_entry(i)).collect();
        optimality_from_gradient(self.activity(), &grad)
    }
}

/// Dense `f(a)` from scratch; reference path.
pub fn dense_objective(pop: &DevicePopulation, y: &CVec, a: &[f64]) -> Result<f64> {
    let sigma = covariance_matrix(pop, a);
    let (inv, logdet) =
        hpd_inverse_logdet(&sigma).ok_or_else(|| Error::Numerical("covariance not positive definite".into()))?;
    let r = y - mean_vector(pop, a);
    Ok(logdet + r.dotc(&(&inv * &r)).re)
}

/// Full state: `Σ_a⁻¹` stored densely.
#[derive(Debug, Clone)]
pub struct FullModel<'a> {
    pop: &'a DevicePopulation,
    y: CVec,
    pub a: Vec<f64>,
    pub sigma_inv: CMat,
    pub residual: CVec,
    pub logdet: f64,
    /// Dense recompute after this many nonzero updates.
    pub recompute_every: usize,
    since_recompute: usize,
    recomputes: usize,
    cache: Option<(usize, CMat)>,
}

impl<'a> FullModel<'a> {
    /// State at `a = 0`: `Σ⁻¹ = σ⁻²I`, residual `y`.
    pub fn new(pop: &'a DevicePopulation, y: &CVec) -> Result<Self> {
        if y.len() != pop.dim() {
            return Err(Error::Dimension(format!("y has length {}, expected {}", y.len(), pop.dim())));
        }
        let n = pop.dim();
        Ok(Self {
            pop,
            y: y.clone(),
            a: vec![0.0; pop.coords()],
            sigma_inv: CMat::from_diagonal_element(n, n, c(1.0 / pop.noise_power, 0.0)),
            residual: y.clone(),
            logdet: n as f64 * pop.noise_power.ln(),
            recompute_every: 10 * pop.coords().max(1),
            since_recompute: 0,
            recomputes: 0,
            cache: None,
        })
    }

    pub fn population(&self) -> &DevicePopulation {
        self.pop
    }

    /// `Z = Σ⁻¹(I_M ⊗ s_i)`, cached until the next update.
    fn z_matrix(&mut self, i: usize) -> CMat {
        if let Some((j, z)) = &self.cache {
            if *j == i {
                return z.clone();
            }
        }
        let z = times_block_sequence(&self.sigma_inv, self.pop.sequence(i), self.pop.antennas);
        self.cache = Some((i, z.clone()));
        z
    }

    fn woodbury(&mut self, i: usize, d: f64) -> Result<UpdateInfo> {
        let s = self.pop.sequence(i).clone();
        let z = self.z_matrix(i);
        let g = block_sequence_adjoint_times(&z, &s, self.pop.antennas);
        let (b, k) = match &self.pop.channel(i).correlation {
            Correlation::LowRank(f) => (&z * f, f.adjoint() * &g * f),
            Correlation::ScaledIdentity(gn) => (&z * c(gn.sqrt(), 0.0), &g * c(*gn, 0.0)),
        };
        let r = k.nrows();
        let inner = CMat::identity(r, r) + &k * c(d, 0.0);
        let chol = match hpd_cholesky(&inner) {
            Some(ch) => ch,
            None => return self.fallback(i, d),
        };
        let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|z| z.re).collect();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if !(lo > 0.0) || (hi / lo).powi(2) > CONDITION_LIMIT {
            return self.fallback(i, d);
        }
        let logdet_change = 2.0 * diag.iter().map(|x| x.ln()).sum::<f64>();
        let core = chol.inverse() * c(d, 0.0);
        hermitian_downdate(&mut self.sigma_inv, &b, &hermitize(&core));
        self.logdet += logdet_change;
        Ok(UpdateInfo { logdet_change, recomputed: false })
    }

    fn fallback(&mut self, i: usize, d: f64) -> Result<UpdateInfo> {
        let before = self.logdet;
        self.a[i] += d;
        self.recompute()?;
        self.a[i] -= d;
        Ok(UpdateInfo { logdet_change: self.logdet - before, recomputed: true })
    }
}

impl CovarianceModel for FullModel<'_> {
    fn coords(&self) -> usize {
        self.a.len()
    }

    fn activity(&self) -> &[f64] {
        &self.a
    }

    fn kernel(&mut self, i: usize) -> Kernel {
        let m = self.pop.antennas;
        let s = self.pop.sequence(i).clone();
        let z = self.z_matrix(i);
        let g = block_sequence_adjoint_times(&z, &s, m);
        let w = z.adjoint() * &self.residual;
        let stats = self.pop.channel(i);
        let h = &stats.los_mean;
        let gh = &g * h;
        let alpha = w.dotc(h);
        let beta = h.dotc(&gh).re;
        let block = match &stats.correlation {
            Correlation::LowRank(f) => {
                let fh = f.adjoint();
                KernelBlock::Dense { gram: &fh * &g * f, u: &fh * &w, v: &fh * &gh }
            }
            Correlation::ScaledIdentity(gn) => {
                let sq = c(gn.sqrt(), 0.0);
                KernelBlock::Dense { gram: &g * c(*gn, 0.0), u: w * sq, v: gh * sq }
            }
        };
        Kernel { blocks: vec![block], alpha, beta }
    }

    fn update(&mut self, i: usize, d: f64) -> Result<UpdateInfo> {
        if d == 0.0 {
            return Ok(UpdateInfo::default());
        }
        let info = self.woodbury(i, d)?;
        self.a[i] += d;
        let mc = self.pop.mean_component(i);
        self.residual -= mc * c(d, 0.0);
        self.cache = None;
        if info.recomputed {
            self.recompute()?;
            return Ok(info);
        }
        self.since_recompute += 1;
        if self.since_recompute >= self.recompute_every {
            let before = self.logdet;
            self.recompute()?;
            return Ok(UpdateInfo { logdet_change: info.logdet_change + self.logdet - before, recomputed: true });
        }
        Ok(info)
    }

    fn objective(&self) -> f64 {
        self.logdet + self.residual.dotc(&(&self.sigma_inv * &self.residual)).re
    }

    fn recompute(&mut self) -> Result<()> {
        let sigma = covariance_matrix(self.pop, &self.a);
        let (inv, logdet) = hpd_inverse_logdet(&sigma)
            .ok_or_else(|| Error::Numerical("covariance lost positive definiteness".into()))?;
        self.sigma_inv = inv;
        self.logdet = logdet;
        self.residual = &self.y - mean_vector(self.pop, &self.a);
        self.since_recompute = 0;
        self.recomputes += 1;
        self.cache = None;
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
