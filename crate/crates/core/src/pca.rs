//! Principal-component diagnostic for pose priors.
//!
//! Fit the covariance eigenbasis of a subset of pose dimensions, rotate the
//! data into principal coordinates, fit a 1D normal along the first
//! component and measure how much of that normal's mass falls outside a
//! feasible interval. For one-sided joints (a knee that only flexes one way)
//! the fitted normal leaks probability onto impossible configurations.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{jacobi_eigen, mean_and_covariance, DEFAULT_EIGEN_TOL};
use crate::posedata::PoseDataset;
use crate::special::{std_normal_cdf, LN_2PI};

const EIGEN_CLAMP: f64 = -1e-10;
const DEGENERATE_BIN_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Dataset columns the model was fitted on.
    pub dims: Vec<usize>,
    pub mean: Vec<f64>,
    /// Row-major `k x k`, eigenvectors as columns in descending eigenvalue order.
    pub basis: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Column `k` of the basis.
    pub fn component(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.basis[i * n + k]).collect()
    }

    /// Picks the model's dims out of a full-width sample.
    pub fn select(&self, sample: &[f64]) -> Vec<f64> {
        self.dims.iter().map(|&d| sample[d]).collect()
    }

    /// Maps principal coordinates back: `U q + mean`.
    pub fn inverse_map(&self, q: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_dim(n, q.len())?;
        Ok((0..n)
            .map(|i| self.mean[i] + (0..n).map(|k| self.basis[i * n + k] * q[k]).sum::<f64>())
            .collect())
    }
}

/// Sample mean and eigenbasis of the unbiased covariance over `dims`.
/// Identical samples give a valid model with zero eigenvalues.
pub fn fit_pca(data: &PoseDataset, dims: &[usize]) -> Result<PcaModel> {
    if data.len() < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {}", data.len())));
    }
    if dims.is_empty() {
        return Err(Error::invalid("PCA needs at least one dimension"));
    }
    for (i, &d) in dims.iter().enumerate() {
        if d >= data.dim {
            return Err(Error::invalid(format!("dimension {d} out of range 0..{}", data.dim)));
        }
        if dims[..i].contains(&d) {
            return Err(Error::invalid(format!("dimension {d} listed twice")));
        }
    }
    let selected: Vec<Vec<f64>> =
        data.samples.iter().map(|s| dims.iter().map(|&d| s[d]).collect()).collect();
    let rows: Vec<&[f64]> = selected.iter().map(|s| s.as_slice()).collect();
    let (mean, cov) = mean_and_covariance(&rows)?;
    let eig = jacobi_eigen(&cov, DEFAULT_EIGEN_TOL)?;
    let eigenvalues = eig
        .eigenvalues
        .iter()
        .map(|&v| if (EIGEN_CLAMP..0.0).contains(&v) { 0.0 } else { v })
        .collect();
    Ok(PcaModel { dims: dims.to_vec(), mean, basis: eig.basis, eigenvalues })
}

/// Principal coordinates `U^T (p - mean)` of each point.
pub fn reorient(model: &PcaModel, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = model.dim();
    points
        .iter()
        .map(|p| {
            check_dim(n, p.len())?;
            Ok((0..n)
                .map(|k| (0..n).map(|i| model.basis[i * n + k] * (p[i] - model.mean[i])).sum())
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normal1D {
    pub mu: f64,
    pub sigma: f64,
}

impl Normal1D {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * (LN_2PI + z * z) - self.sigma.ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mu) / self.sigma)
    }
}

/// Sample mean and unbiased standard deviation.
pub fn fit_normal_1d(samples: &[f64]) -> Result<Normal1D> {
    if samples.len() < 2 {
        return Err(Error::invalid("a 1D normal fit needs at least 2 samples"));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::invalid("degenerate variance"));
    }
    Ok(Normal1D { mu, sigma: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram1D {
    /// `bin_lo,bin_hi,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
/// All-equal samples get bin width 1e-9 and fall into bin 0.
pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram1D> {
    if samples.is_empty() {
        return Err(Error::invalid("histogram of empty samples"));
    }
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("histogram samples must be finite"));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { DEGENERATE_BIN_WIDTH };
    let mut edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    if hi > lo {
        edges[bins] = hi;
    }
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let idx = (((x - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram1D { edges, counts, total: samples.len() as u64 })
}

/// Probability the normal places outside `[feasible_lo, feasible_hi]`.
pub fn infeasible_mass(n: &Normal1D, feasible_lo: f64, feasible_hi: f64) -> Result<f64> {
    if !(feasible_lo < feasible_hi) {
        return Err(Error::invalid("feasible_lo must be below feasible_hi"));
    }
    let inside = n.cdf(feasible_hi) - n.cdf(feasible_lo);
    Ok((1.0 - inside).clamp(0.0, 1.0))
}
