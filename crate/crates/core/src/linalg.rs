//! Dense symmetric linear algebra: cyclic Jacobi eigendecomposition,
//! Cholesky factorization with diagonal jitter escalation, and triangular
//! solves. Matrices are small (at most a few hundred rows), stored row-major.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;
pub const DEFAULT_BASE_JITTER: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
const JITTER_ESCALATIONS: i32 = 6;

/// A symmetric `n x n` matrix. Construction symmetrizes as `(A + A^T) / 2`,
/// so `get(i, j) == get(j, i)` holds bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        check_dim(n * n, entries.len())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let mut m = SymMatrix { n, entries };
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m.entries[i * n + j] + m.entries[j * n + i]);
                m.entries[i * n + j] = avg;
                m.entries[j * n + i] = avg;
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            check_dim(n, row.len())?;
            entries.extend_from_slice(row);
        }
        Self::new(n, entries)
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut entries = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            entries[i * n + i] = *v;
        }
        SymMatrix { n, entries }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Returns `A + value * I`.
    pub fn add_diagonal(&self, value: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            out.entries[i * self.n + i] += value;
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        Ok(self
            .entries
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.rows()
    }
}

/// Eigendecomposition of a symmetric matrix. `basis` is row-major with the
/// eigenvectors stored as columns, ordered by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp {
    pub n: usize,
    pub basis: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl EigenDecomp {
    /// The `k`-th eigenvector (column `k` of the basis).
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.basis[i * self.n + k]).collect()
    }

    /// `basis * diag(eigenvalues) * basis^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n)
                    .map(|k| self.basis[i * n + k] * self.eigenvalues[k] * self.basis[j * n + k])
                    .sum();
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps rotate every off-diagonal pair until the largest off-diagonal
/// magnitude drops below `tol * max(1, |A|_F)`. Eigenpairs are returned in
/// descending eigenvalue order; each eigenvector is signed so that its
/// largest-magnitude entry is non-negative.
pub fn jacobi_eigen(a: &SymMatrix, tol: f64) -> Result<EigenDecomp> {
    if !(tol > 0.0) {
        return Err(Error::invalid("eigen tolerance must be positive"));
    }
    let n = a.n;
    let mut m = a.entries.clone();
    let mut v = SymMatrix::identity(n).entries;
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = tol * frob.max(1.0);

    let off_max = |m: &[f64]| {
        let mut best = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(m[i * n + j].abs());
            }
        }
        best
    };

    let mut residual = off_max(&m);
    let mut sweeps = 0;
    while residual >= threshold {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { residual });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        residual = off_max(&m);
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in index order
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));

    let mut basis = vec![0.0; n * n];
    let mut eigenvalues = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        eigenvalues.push(m[src * n + src]);
        let mut pivot = 0;
        for i in 0..n {
            if v[i * n + src].abs() > v[pivot * n + src].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[i * n + col] = sign * v[i * n + src];
        }
    }
    Ok(EigenDecomp { n, basis, eigenvalues })
}

/// Lower Cholesky factor `L` with `L L^T = A + jitter_applied * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    pub n: usize,
    pub lower: Vec<f64>,
    pub log_det: f64,
    pub jitter_applied: f64,
}

// Pivots at or below `n * eps * max|a_jj|` count as failures, so numerically
// singular input takes the jitter path instead of producing a huge inverse.
fn try_cholesky(a: &SymMatrix, jitter: f64) -> Option<Vec<f64>> {
    let n = a.n;
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max) + jitter;
    let floor = n as f64 * f64::EPSILON * scale;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j) + jitter;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Cholesky factorization. An unjittered attempt is made first; on pivot
/// failure the diagonal is loaded with `base_jitter * 10^k`, `k = 0..=6`.
pub fn cholesky(a: &SymMatrix, base_jitter: f64) -> Result<CholFactor> {
    if !(base_jitter >= 0.0) {
        return Err(Error::invalid("base jitter must be non-negative"));
    }
    let n = a.n;
    let mut schedule = vec![0.0];
    if base_jitter > 0.0 {
        schedule.extend((0..=JITTER_ESCALATIONS).map(|k| base_jitter * 10f64.powi(k)));
    }
    for &jitter in &schedule {
        if let Some(lower) = try_cholesky(a, jitter) {
            let log_det = 2.0 * (0..n).map(|i| lower[i * n + i].ln()).sum::<f64>();
            return Ok(CholFactor { n, lower, log_det, jitter_applied: jitter });
        }
    }
    Err(Error::NotPositiveDefinite { jitter: *schedule.last().unwrap() })
}

impl CholFactor {
    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        check_dim(n, b.len())?;
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        Ok(y)
    }

    /// Solves `L^T x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        check_dim(n, y.len())?;
        let l = &self.lower;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        Ok(x)
    }

    /// Computes `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        check_dim(n, z.len())?;
        Ok((0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * z[k]).sum())
            .collect())
    }

    /// `L L^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..=i.min(j))
                    .map(|k| self.lower[i * n + k] * self.lower[j * n + k])
                    .sum();
            }
        }
        out
    }
}

/// Solves `(L L^T) y = b` by forward then backward substitution.
pub fn chol_solve(f: &CholFactor, b: &[f64]) -> Result<Vec<f64>> {
    let y = f.solve_lower(b)?;
    f.solve_upper(&y)
}

/// Sample mean and unbiased (N-1) covariance of `samples`.
pub fn mean_and_covariance(samples: &[&[f64]]) -> Result<(Vec<f64>, SymMatrix)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples for a covariance, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        check_dim(d, s.len())?;
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            centered[i] = s[i] - mean[i];
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mean, SymMatrix::new(d, cov)?))
}

/// Frobenius norm of the difference of two equally sized row-major matrices.
pub fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
