use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, Prior};
use crate::error::{check_dim, Error, Result};
use crate::posedata::PoseDataset;

/// Soft per-axis joint limits: a quadratic penalty outside `[lo, hi]`,
/// zero inside. The penalty and its gradient are continuous at the limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxParams", into = "BoxParams")]
pub struct BoxLimitModel {
    lo: Vec<f64>,
    hi: Vec<f64>,
    stiffness: f64,
}

#[derive(Serialize, Deserialize)]
struct BoxParams {
    lo: Vec<f64>,
    hi: Vec<f64>,
    stiffness: f64,
}

impl TryFrom<BoxParams> for BoxLimitModel {
    type Error = Error;

    fn try_from(p: BoxParams) -> Result<Self> {
        BoxLimitModel::new(p.lo, p.hi, p.stiffness)
    }
}

impl From<BoxLimitModel> for BoxParams {
    fn from(m: BoxLimitModel) -> Self {
        BoxParams { lo: m.lo, hi: m.hi, stiffness: m.stiffness }
    }
}

impl BoxLimitModel {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, stiffness: f64) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::invalid("box model needs at least one dimension"));
        }
        check_finite(&lo)?;
        check_finite(&hi)?;
        if let Some(d) = (0..lo.len()).find(|&d| !(lo[d] < hi[d])) {
            return Err(Error::invalid(format!("box limits require lo < hi (dimension {d})")));
        }
        if !(stiffness > 0.0) || !stiffness.is_finite() {
            return Err(Error::invalid("box stiffness must be positive"));
        }
        Ok(BoxLimitModel { lo, hi, stiffness })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }

    /// Signed violation: positive above `hi`, negative below `lo`, else 0.
    fn violation(&self, d: usize, x: f64) -> f64 {
        if x > self.hi[d] {
            x - self.hi[d]
        } else if x < self.lo[d] {
            x - self.lo[d]
        } else {
            0.0
        }
    }

    /// `-k * sum(violation^2)`.
    pub fn log_penalty(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.lo.len(), x.len())?;
        check_finite(x)?;
        let s: f64 = x.iter().enumerate().map(|(d, &v)| self.violation(d, v).powi(2)).sum();
        Ok(-self.stiffness * s)
    }

    /// `-2k * violation` per dimension.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.lo.len(), x.len())?;
        check_finite(x)?;
        Ok(x.iter().enumerate().map(|(d, &v)| -2.0 * self.stiffness * self.violation(d, v)).collect())
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Uniform draw from the interior (1% inset from each limit).
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let inset = 0.01 * (h - l);
                rng.random_range((l + inset)..(h - inset))
            })
            .collect()
    }
}

impl Prior for BoxLimitModel {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.log_penalty(x)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad(x)
    }

    fn mode(&self) -> Option<Vec<f64>> {
        Some(self.center())
    }

    fn mean(&self) -> Option<Vec<f64>> {
        Some(self.center())
    }
}

/// Limits at the per-dimension data range, widened by `margin` on each side.
pub fn fit_box(data: &PoseDataset, stiffness: f64, margin: f64) -> Result<BoxLimitModel> {
    if !(margin >= 0.0) {
        return Err(Error::invalid("box margin must be non-negative"));
    }
    let lo = (0..data.dim)
        .map(|d| data.column(d).into_iter().fold(f64::INFINITY, f64::min) - margin)
        .collect();
    let hi = (0..data.dim)
        .map(|d| data.column(d).into_iter().fold(f64::NEG_INFINITY, f64::max) + margin)
        .collect();
    BoxLimitModel::new(lo, hi, stiffness)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_is_zero() {
        let m = BoxLimitModel::new(vec![-1.0, 0.0], vec![1.0, 2.0], 5.0).unwrap();
        assert_eq!(m.log_penalty(&[0.5, 1.0]).unwrap(), 0.0);
        assert_eq!(m.grad(&[0.5, 1.0]).unwrap(), vec![0.0, 0.0]);
        // at the limit itself the penalty and gradient are still zero
        assert_eq!(m.log_penalty(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(m.grad(&[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn violation_examples() {
        let m = BoxLimitModel::new(vec![-1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(m.log_penalty(&[2.0]).unwrap(), -1.0);
        assert_eq!(m.grad(&[2.0]).unwrap(), vec![-2.0]);
        assert_eq!(m.log_penalty(&[-3.0]).unwrap(), -4.0);
        assert_eq!(m.grad(&[-3.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn invalid_limits() {
        assert!(BoxLimitModel::new(vec![1.0], vec![1.0], 1.0).is_err());
        assert!(BoxLimitModel::new(vec![0.0], vec![1.0], 0.0).is_err());
        assert!(BoxLimitModel::new(vec![0.0], vec![1.0, 2.0], 1.0).is_err());
        let m = BoxLimitModel::new(vec![0.0], vec![1.0], 1.0).unwrap();
        assert!(m.log_penalty(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn fit_uses_data_range() {
        let data = PoseDataset::new(vec![vec![0.0, -1.0], vec![2.0, 1.0], vec![1.0, 0.0]], "t").unwrap();
        let m = fit_box(&data, 10.0, 0.5).unwrap();
        assert_eq!(m.lo(), &[-0.5, -1.5]);
        assert_eq!(m.hi(), &[2.5, 1.5]);
    }
}
