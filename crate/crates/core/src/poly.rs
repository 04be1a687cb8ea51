//! Real polynomials in the monomial basis (ascending coefficients), with
//! companion-matrix root finding and a closed-form cubic solver.

use nalgebra::DMatrix;

/// Roots whose imaginary part is below `IMAG_TOL·(1 + |re|)` count as real.
pub const IMAG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    /// `coeffs[k]` multiplies `x^k`.
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn constant(v: f64) -> Self {
        Self { coeffs: vec![v] }
    }

    /// `a + b·x`.
    pub fn linear(a: f64, b: f64) -> Self {
        Self { coeffs: vec![a, b] }
    }

    /// Nominal degree (length − 1), including zero leading coefficients.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Degree after dropping exactly-zero leading coefficients.
    pub fn effective_degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    /// Drop leading coefficients below `rel · max|c_k|`; cancellation noise
    /// in a leading term otherwise produces a spurious huge root.
    pub fn trimmed(&self, rel: f64) -> Poly {
        let top = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let keep = self.coeffs.iter().rposition(|c| c.abs() > rel * top).map_or(1, |k| k + 1);
        Poly { coeffs: self.coeffs[..keep].to_vec() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new(
            (0..n)
                .map(|k| {
                    self.coeffs.get(k).copied().unwrap_or(0.0)
                        + other.coeffs.get(k).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Real roots via eigenvalues of the companion matrix.
    ///
    /// Returns `None` when the eigen-solver produces non-finite values.
    pub fn real_roots(&self) -> Option<Vec<f64>> {
        let deg = self.effective_degree();
        if deg == 0 {
            return Some(Vec::new());
        }
        let lead = self.coeffs[deg];
        if deg == 1 {
            return Some(vec![-self.coeffs[0] / lead]);
        }
        let mut comp = DMatrix::<f64>::zeros(deg, deg);
        for i in 1..deg {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..deg {
            comp[(i, deg - 1)] = -self.coeffs[i] / lead;
        }
        if comp.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let eig = comp.complex_eigenvalues();
        let mut roots = Vec::new();
        for z in eig.iter() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return None;
            }
            if z.im.abs() <= IMAG_TOL * (1.0 + z.re.abs()) {
                roots.push(z.re);
            }
        }
        Some(roots)
    }
}

/// Real roots of `a·x³ + b·x² + c·x + d` in closed form.
///
/// Degenerate leading coefficients fall through to the quadratic and linear
/// formulas.
pub fn cubic_real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return quadratic_real_roots(b, c, d);
    }
    // Depressed cubic t³ + p t + q with x = t − b/(3a).
    let (bn, cn, dn) = (b / a, c / a, d / a);
    let shift = bn / 3.0;
    let p = cn - bn * bn / 3.0;
    let q = 2.0 * bn * bn * bn / 27.0 - bn * cn / 3.0 + dn;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if p == 0.0 && q == 0.0 {
        vec![0.0]
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v]
    } else if p < 0.0 {
        let rad = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (p * rad)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| rad * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    } else {
        vec![(-q).cbrt()]
    };
    for r in roots.iter_mut() {
        *r -= shift;
        // One Newton polish step on the original cubic.
        let f = ((a * *r + b) * *r + c) * *r + d;
        let df = (3.0 * a * *r + 2.0 * b) * *r + c;
        if df != 0.0 {
            let step = f / df;
            if step.is_finite() && step.abs() < 1e-3 * (1.0 + r.abs()) {
                *r -= step;
            }
        }
    }
    roots
}

pub fn quadratic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let q = if q == 0.0 { -0.5 * b } else { q };
    let mut out = vec![q / a];
    if q != 0.0 {
        out.push(c / q);
    }
    out
}
