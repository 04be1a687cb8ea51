//! Dense complex linear algebra helpers shared by the solvers.
//!
//! Matrices are `nalgebra` column-major `DMatrix<Complex64>`. The hot
//! loops (block-sequence products and Hermitian low-rank downdates) work
//! directly on the column-major slices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

/// `h ⊗ s` for column vectors.
pub fn kron_vec(h: &CVec, s: &CVec) -> CVec {
    let l = s.len();
    let mut out = CVec::zeros(h.len() * l);
    for (m, hm) in h.iter().enumerate() {
        for (i, si) in s.iter().enumerate() {
            out[m * l + i] = hm * si;
        }
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(hermitize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

/// `(m + mᴴ) / 2`.
pub fn hermitize(m: &CMat) -> CMat {
    let n = m.nrows();
    CMat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in j..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Cholesky factor of the Hermitian part of `m`, or `None` unless every
/// pivot is real and positive. The complex factorisation in nalgebra takes
/// square roots of negative pivots without complaint.
pub fn hpd_cholesky(m: &CMat) -> Option<Cholesky<Complex64, Dyn>> {
    let chol = Cholesky::new(hermitize(m))?;
    let ok = chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-8 * d.re);
    ok.then_some(chol)
}

/// Inverse and log-determinant of a Hermitian positive definite matrix.
pub fn hpd_inverse_logdet(m: &CMat) -> Option<(CMat, f64)> {
    let chol = hpd_cholesky(m)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    Some((chol.inverse(), logdet))
}

/// Log-determinant of a Hermitian positive definite matrix.
pub fn hpd_logdet(m: &CMat) -> Option<f64> {
    let chol = hpd_cholesky(m)?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
}

/// Numerical rank of a Hermitian PSD matrix: eigenvalues above `rel_tol·λ_max`.
pub fn psd_rank(m: &CMat, rel_tol: f64) -> usize {
    let (vals, _) = hermitian_eigen(m);
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Numerical rank of a general matrix via singular values above `rel_tol·σ_max`.
pub fn matrix_rank(m: &CMat, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > rel_tol * top).count()
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `xᴴ y`.
#[inline]
pub fn dotc(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    let mut acc = ZERO;
    for (a, b) in x.iter().zip(y) {
        acc += a.conj() * b;
    }
    acc
}

/// `Z = S·(I_blocks ⊗ s)`: column `b` of `Z` is `S[:, bL..(b+1)L]·s`.
///
/// `S` is `n × (blocks·L)`; only the first `blocks·L` columns are read.
pub fn times_block_sequence(sigma: &CMat, s: &CVec, blocks: usize) -> CMat {
    let n = sigma.nrows();
    let l = s.len();
    let mut z = CMat::zeros(n, blocks);
    let src = sigma.as_slice();
    let dst = z.as_mut_slice();
    for b in 0..blocks {
        let out = &mut dst[b * n..(b + 1) * n];
        for (i, si) in s.iter().enumerate() {
            let col = &src[(b * l + i) * n..(b * l + i + 1) * n];
            for (o, v) in out.iter_mut().zip(col) {
                *o += v * si;
            }
        }
    }
    z
}

/// `(I_blocks ⊗ s)ᴴ Z`: a `blocks × Z.ncols()` matrix.
pub fn block_sequence_adjoint_times(z: &CMat, s: &CVec, blocks: usize) -> CMat {
    let l = s.len();
    let n = z.nrows();
    let mut out = CMat::zeros(blocks, z.ncols());
    let src = z.as_slice();
    for j in 0..z.ncols() {
        let col = &src[j * n..(j + 1) * n];
        for b in 0..blocks {
            out[(b, j)] = dotc(s.as_slice(), &col[b * l..(b + 1) * l]);
        }
    }
    out
}

/// In-place Hermitian downdate `S ← S − B·C·Bᴴ` with `C` Hermitian.
///
/// Only the lower triangle is accumulated; the upper triangle is mirrored
/// afterwards so `S` stays exactly Hermitian.
pub fn hermitian_downdate(sigma: &mut CMat, b: &CMat, core: &CMat) {
    let n = sigma.nrows();
    let r = b.ncols();
    if r == 0 {
        return;
    }
    let g = b * core;
    let gs = g.as_slice();
    let bs = b.as_slice();
    let ss = sigma.as_mut_slice();
    for j in 0..n {
        let col = &mut ss[j * n..(j + 1) * n];
        for k in 0..r {
            let coeff = bs[k * n + j].conj();
            if coeff == ZERO {
                continue;
            }
            let gcol = &gs[k * n..(k + 1) * n];
            for i in j..n {
                col[i] -= gcol[i] * coeff;
            }
        }
    }
    for j in 0..n {
        ss[j * n + j].im = 0.0;
        for i in (j + 1)..n {
            ss[i * n + j] = ss[j * n + i].conj();
        }
    }
}

/// `xᴴ A y` for a dense matrix.
pub fn quad_form(x: &CVec, a: &CMat, y: &CVec) -> Complex64 {
    x.dotc(&(a * y))
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn real_identity_scaled(n: usize, v: f64) -> CMat {
    CMat::from_diagonal_element(n, n, c(v, 0.0))
}

pub fn to_real_matrix(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, k: usize, seed: u64) -> CMat {
        CMat::from_fn(n, k, |i, j| {
            let t = (seed as f64 + 1.0) * (i as f64 * 1.3 + j as f64 * 0.7 + 0.1);
            c(t.sin(), (1.7 * t).cos())
        })
    }

    #[test]
    fn kron_vec_matches_dense_kron() {
        let h = CVec::from_column_slice(&[c(1.0, 2.0), c(-0.5, 0.25)]);
        let s = CVec::from_column_slice(&[c(0.0, 1.0), c(3.0, 0.0), c(1.0, -1.0)]);
        let dense = kron(
            &CMat::from_column_slice(2, 1, h.as_slice()),
            &CMat::from_column_slice(3, 1, s.as_slice()),
        );
        let v = kron_vec(&h, &s);
        for i in 0..6 {
            assert!((dense[(i, 0)] - v[i]).norm() < 1e-15);
        }
    }

    #[test]
    fn block_sequence_product_matches_kron() {
        let sigma = sample(6, 6, 3);
        let s = CVec::from_column_slice(&[c(1.0, 0.5), c(-0.3, 2.0)]);
        let z = times_block_sequence(&sigma, &s, 3);
        let ks = kron(&identity(3), &CMat::from_column_slice(2, 1, s.as_slice()));
        let dense = &sigma * &ks;
        assert!(frobenius(&(z.clone() - &dense)) < 1e-12);
        let g = block_sequence_adjoint_times(&z, &s, 3);
        let dense_g = ks.adjoint() * dense;
        assert!(frobenius(&(g - dense_g)) < 1e-12);
    }

    #[test]
    fn downdate_matches_dense() {
        let a = sample(5, 5, 1);
        let sigma = &a * a.adjoint() + identity(5);
        let b = sample(5, 2, 9);
        let core = {
            let t = sample(2, 2, 4);
            &t * t.adjoint()
        };
        let mut s = sigma.clone();
        hermitian_downdate(&mut s, &b, &core);
        let dense = sigma - &b * core * b.adjoint();
        assert!(frobenius(&(s.clone() - dense)) < 1e-12);
        assert_eq!(hermitian_defect(&s), 0.0);
    }

    #[test]
    fn eigen_sorted_descending_and_reconstructs() {
        let a = sample(4, 3, 2);
        let m = &a * a.adjoint();
        let (vals, vecs) = hermitian_eigen(&m);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let lam = CMat::from_diagonal(&DVector::from_iterator(4, vals.iter().map(|&v| c(v, 0.0))));
        let back = &vecs * lam * vecs.adjoint();
        assert!(frobenius(&(back - &m)) < 1e-10);
        assert_eq!(psd_rank(&m, 1e-9), 3);
    }

    #[test]
    fn logdet_of_scaled_identity() {
        let (inv, ld) = hpd_inverse_logdet(&real_identity_scaled(3, 2.0)).unwrap();
        assert!((ld - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!((inv[(1, 1)].re - 0.5).abs() < 1e-15);
    }
}
