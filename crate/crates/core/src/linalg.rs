//! Tridiagonal solves, Sturm counts and a thin dense symmetric eigensolver wrapper.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{LabError, Result};

/// Row `i` reads `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1]`; `sub[0]` and `sup[n-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<Complex64>,
    pub diag: Vec<Complex64>,
    pub sup: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    /// Whether the unpivoted pass broke down and the pivoted solve was used.
    pub pivoted: bool,
    /// Smallest pivot magnitude relative to its row scale.
    pub min_pivot_ratio: f64,
}

const BREAKDOWN: f64 = 1e-13;

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Tridiagonal { sub: vec![z; n], diag: vec![z; n], sup: vec![z; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.sup[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Thomas elimination, falling back to a partially pivoted band LU on a small pivot.
    pub fn solve(&self, rhs: &[Complex64]) -> Result<(Vec<Complex64>, SolveInfo)> {
        if rhs.len() != self.len() {
            return Err(LabError::invalid("right-hand side length does not match the operator"));
        }
        match self.thomas(rhs) {
            Some((x, ratio)) => Ok((x, SolveInfo { pivoted: false, min_pivot_ratio: ratio })),
            None => {
                let (x, ratio) = self.pivoted(rhs)?;
                Ok((x, SolveInfo { pivoted: true, min_pivot_ratio: ratio }))
            }
        }
    }

    fn row_scale(&self, i: usize) -> f64 {
        self.sub[i].norm() + self.diag[i].norm() + self.sup[i].norm()
    }

    fn thomas(&self, rhs: &[Complex64]) -> Option<(Vec<Complex64>, f64)> {
        let n = self.len();
        let mut cp = vec![Complex64::new(0.0, 0.0); n];
        let mut dp = vec![Complex64::new(0.0, 0.0); n];
        let mut min_ratio = f64::INFINITY;
        let mut beta = self.diag[0];
        for i in 0..n {
            if i > 0 {
                beta = self.diag[i] - self.sub[i] * cp[i - 1];
            }
            let ratio = beta.norm() / self.row_scale(i).max(f64::MIN_POSITIVE);
            if !(ratio > BREAKDOWN) || !beta.re.is_finite() || !beta.im.is_finite() {
                return None;
            }
            min_ratio = min_ratio.min(ratio);
            cp[i] = if i + 1 < n { self.sup[i] / beta } else { Complex64::new(0.0, 0.0) };
            dp[i] = if i > 0 { (rhs[i] - self.sub[i] * dp[i - 1]) / beta } else { rhs[i] / beta };
        }
        let mut x = dp;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= cp[i] * next;
        }
        Some((x, min_ratio))
    }

    fn pivoted(&self, rhs: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
        let n = self.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut d = self.diag.clone();
        let mut du = self.sup.clone();
        // dl[i] = entry (i+1, i); after elimination it holds the second superdiagonal of row i.
        let mut dl: Vec<Complex64> = (0..n).map(|i| if i + 1 < n { self.sub[i + 1] } else { zero }).collect();
        let mut b = rhs.to_vec();
        let scale: Vec<f64> = (0..n).map(|i| self.row_scale(i)).collect();
        let singular = |i: usize| LabError::Singular {
            diagnostic: format!("zero pivot at row {i} of {n} in pivoted tridiagonal solve"),
        };
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i] == zero {
                    return Err(singular(i));
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                let bi = b[i];
                b[i + 1] -= fact * bi;
                dl[i] = zero;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = zero;
                }
                du[i] = temp;
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - fact * b[i + 1];
            }
        }
        if d[n - 1] == zero {
            return Err(singular(n - 1));
        }
        let mut min_ratio = f64::INFINITY;
        for i in 0..n {
            min_ratio = min_ratio.min(d[i].norm() / scale[i].max(f64::MIN_POSITIVE));
        }
        b[n - 1] /= d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        }
        for j in (0..n.saturating_sub(2)).rev() {
            b[j] = (b[j] - du[j] * b[j + 1] - dl[j] * b[j + 2]) / d[j];
        }
        if b.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LabError::Singular {
                diagnostic: format!("non-finite solution; smallest relative pivot {min_ratio:.3e}"),
            });
        }
        Ok((b, min_ratio))
    }
}

/// Unpivoted LU factors of a tridiagonal matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct ThomasFactors {
    sub: Vec<Complex64>,
    cp: Vec<Complex64>,
    beta_inv: Vec<Complex64>,
    /// Smallest pivot relative to its row scale.
    pub min_pivot_ratio: f64,
}

impl ThomasFactors {
    pub fn new(t: &Tridiagonal) -> Result<Self> {
        let n = t.len();
        let mut cp = vec![Complex64::new(0.0, 0.0); n];
        let mut beta_inv = vec![Complex64::new(0.0, 0.0); n];
        let mut min_ratio = f64::INFINITY;
        for i in 0..n {
            let beta = if i == 0 { t.diag[0] } else { t.diag[i] - t.sub[i] * cp[i - 1] };
            let ratio = beta.norm() / t.row_scale(i).max(f64::MIN_POSITIVE);
            if !(ratio > BREAKDOWN) {
                return Err(LabError::Singular {
                    diagnostic: format!("pivot ratio {ratio:.3e} at row {i} in factored tridiagonal"),
                });
            }
            min_ratio = min_ratio.min(ratio);
            beta_inv[i] = beta.inv();
            cp[i] = if i + 1 < n { t.sup[i] * beta_inv[i] } else { Complex64::new(0.0, 0.0) };
        }
        Ok(ThomasFactors { sub: t.sub.clone(), cp, beta_inv, min_pivot_ratio: min_ratio })
    }

    pub fn solve_in_place(&self, x: &mut [Complex64]) {
        let n = x.len();
        x[0] *= self.beta_inv[0];
        for i in 1..n {
            let prev = x[i - 1];
            x[i] = (x[i] - self.sub[i] * prev) * self.beta_inv[i];
        }
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= self.cp[i] * next;
        }
    }
}

/// Symmetric form of a real tridiagonal matrix with positive off-diagonal products.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    /// Squared off-diagonals `sub[i+1] * sup[i]`, length `n - 1`.
    pub off_sq: Vec<f64>,
}

impl SymTridiagonal {
    pub fn from_real_rows(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut off_sq = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n.saturating_sub(1) {
            let p = sub[i + 1] * sup[i];
            if !(p > 0.0) {
                return Err(LabError::invalid(format!(
                    "off-diagonal product at row {i} is not positive; operator is not symmetrizable"
                )));
            }
            off_sq.push(p);
        }
        Ok(SymTridiagonal { diag: diag.to_vec(), off_sq })
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence sign count).
    pub fn count_below(&self, x: f64) -> usize {
        if x == f64::NEG_INFINITY {
            return 0;
        }
        if x == f64::INFINITY {
            return self.diag.len();
        }
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.diag.len() {
            q = if i == 0 { self.diag[0] - x } else { self.diag[i] - x - self.off_sq[i - 1] / q };
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Eigenvalues in `[a, b)`.
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.count_below(b).saturating_sub(self.count_below(a))
    }

    /// Full eigendecomposition (ascending eigenvalues, orthonormal columns).
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let off: Vec<f64> = self.off_sq.iter().map(|p| -p.sqrt()).collect();
        symmetric_eigen(&self.diag, &off)
    }
}

/// Dense eigendecomposition of the symmetric tridiagonal matrix `(diag, off)`, sorted ascending.
pub fn symmetric_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = diag.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = diag[i];
        if i + 1 < n {
            a[(i, i + 1)] = off[i];
            a[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}
