use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_finite, Prior};
use crate::error::{check_dim, Result};
use crate::linalg::{chol_solve, cholesky, mean_and_covariance, CholFactor, SymMatrix, DEFAULT_BASE_JITTER};
use crate::posedata::PoseDataset;
use crate::special::LN_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MvnParams {
    mean: Vec<f64>,
    covariance: SymMatrix,
}

/// Multivariate normal. The Cholesky factor of the covariance is computed
/// once at construction; jitter, if any was needed, is kept on the factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MvnParams", into = "MvnParams")]
pub struct MvnModel {
    mean: Vec<f64>,
    cov: SymMatrix,
    chol: CholFactor,
}

impl TryFrom<MvnParams> for MvnModel {
    type Error = crate::Error;

    fn try_from(p: MvnParams) -> Result<Self> {
        MvnModel::new(p.mean, p.covariance)
    }
}

impl From<MvnModel> for MvnParams {
    fn from(m: MvnModel) -> Self {
        MvnParams { mean: m.mean, covariance: m.cov }
    }
}

impl MvnModel {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        check_finite(&mean)?;
        let chol = cholesky(&cov, DEFAULT_BASE_JITTER)?;
        Ok(MvnModel { mean, cov, chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter_applied
    }

    pub fn log_det(&self) -> f64 {
        self.chol.log_det
    }

    /// `(x - m)^T S^-1 (x - m)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.mean.len(), x.len())?;
        check_finite(x)?;
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let y = self.chol.solve_lower(&diff)?;
        Ok(y.iter().map(|v| v * v).sum())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let n = self.mean.len() as f64;
        Ok(-0.5 * (n * LN_2PI + self.chol.log_det + self.mahalanobis_sq(x)?))
    }

    /// `-S^-1 (x - m)`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.mean.len(), x.len())?;
        check_finite(x)?;
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(chol_solve(&self.chol, &diff)?.into_iter().map(|v| -v).collect())
    }

    /// Applies `S^-1` to a vector.
    pub fn precision_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        chol_solve(&self.chol, v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let lz = self.chol.mul_lower(&z).expect("dimension fixed at construction");
        lz.iter().zip(&self.mean).map(|(a, b)| a + b).collect()
    }
}

impl Prior for MvnModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        MvnModel::log_prob(self, x)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad(x)
    }

    fn mode(&self) -> Option<Vec<f64>> {
        Some(self.mean.clone())
    }

    fn mean(&self) -> Option<Vec<f64>> {
        Some(self.mean.clone())
    }
}

/// Sample mean and unbiased covariance of the dataset.
pub fn fit_mvn(data: &PoseDataset) -> Result<MvnModel> {
    let (mean, cov) = mean_and_covariance(&data.rows())?;
    MvnModel::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mean: Vec<f64>, cov: &[f64]) -> MvnModel {
        MvnModel::new(mean.clone(), SymMatrix::new(mean.len(), cov.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let m = model(vec![0.0], &[1.0]);
        assert!((m.log_prob(&[0.0]).unwrap() - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        let m = model(vec![0.5, -1.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!((m.log_prob(&[0.5, -1.0]).unwrap() - (-(2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        let m = model(vec![1.0], &[4.0]);
        let expected = (0.5 / (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5;
        assert!((m.log_prob(&[3.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - (-2.1120857)).abs() < 1e-7);
    }

    #[test]
    fn gradient_examples() {
        let m = model(vec![0.3, 0.1], &[2.0, 0.5, 0.5, 1.0]);
        assert!(m.grad(&[0.3, 0.1]).unwrap().iter().all(|v| *v == 0.0));
        let m = model(vec![2.0], &[1.0]);
        assert_eq!(m.grad(&[3.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let m = model(vec![0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(m.log_prob(&[0.0]).is_err());
        assert!(m.log_prob(&[f64::NAN, 0.0]).is_err());
        assert!(m.grad(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn two_point_fit() {
        let data = PoseDataset::new(vec![vec![0.0, 0.0], vec![2.0, 2.0]], "t").unwrap();
        let m = fit_mvn(&data).unwrap();
        assert_eq!(m.mean(), &[1.0, 1.0]);
        assert_eq!(m.covariance().entries(), &[2.0, 2.0, 2.0, 2.0]);
        assert!(m.jitter() > 0.0);
        let one = PoseDataset::new(vec![vec![0.0, 0.0]], "t").unwrap();
        assert!(fit_mvn(&one).is_err());
    }

    #[test]
    fn mean_is_argmax() {
        let m = model(vec![0.2, -0.4], &[0.5, 0.2, 0.2, 0.3]);
        let peak = m.log_prob(&[0.2, -0.4]).unwrap();
        for x in [[0.0, 0.0], [0.21, -0.4], [1.0, 1.0], [0.2, -0.39]] {
            assert!(m.log_prob(&x).unwrap() <= peak);
        }
    }
}
