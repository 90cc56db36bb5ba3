use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{check_finite, Prior};
use crate::error::{check_dim, Error, Result};
use crate::posedata::PoseDataset;
use crate::special::ln_gamma;

const MIN_SAMPLES: usize = 10;
const SUPPORT_MARGIN: f64 = 1e-6;

/// One dimension of a [`GammaModel`]: `y = sign * (x - shift)` follows
/// `Gamma(alpha, rate = beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaDim {
    pub alpha: f64,
    pub beta: f64,
    pub sign: f64,
    pub shift: f64,
}

impl GammaDim {
    pub fn new(alpha: f64, beta: f64, sign: f64, shift: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() || !shift.is_finite() {
            return Err(Error::invalid(format!("invalid gamma parameters alpha={alpha}, beta={beta}")));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::invalid("gamma sign must be +1 or -1"));
        }
        Ok(GammaDim { alpha, beta, sign, shift })
    }

    #[inline]
    fn y(&self, x: f64) -> f64 {
        self.sign * (x - self.shift)
    }

    fn log_pdf_y(&self, y: f64) -> f64 {
        self.alpha * self.beta.ln() + (self.alpha - 1.0) * y.ln() - self.beta * y - ln_gamma(self.alpha)
    }
}

/// Product of independent, possibly mirrored and shifted, gamma densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaParams", into = "GammaParams")]
pub struct GammaModel {
    dims: Vec<GammaDim>,
}

#[derive(Serialize, Deserialize)]
struct GammaParams {
    dims: Vec<GammaDim>,
}

impl TryFrom<GammaParams> for GammaModel {
    type Error = Error;

    fn try_from(p: GammaParams) -> Result<Self> {
        GammaModel::new(p.dims)
    }
}

impl From<GammaModel> for GammaParams {
    fn from(m: GammaModel) -> Self {
        GammaParams { dims: m.dims }
    }
}

impl GammaModel {
    pub fn new(dims: Vec<GammaDim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("gamma model needs at least one dimension"));
        }
        for d in &dims {
            GammaDim::new(d.alpha, d.beta, d.sign, d.shift)?;
        }
        Ok(GammaModel { dims })
    }

    pub fn dims(&self) -> &[GammaDim] {
        &self.dims
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len() && self.dims.iter().zip(x).all(|(d, &v)| d.y(v) > 0.0)
    }

    /// Sum of per-dimension log densities; `-inf` as soon as any coordinate
    /// leaves its support.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dims.len(), x.len())?;
        check_finite(x)?;
        let mut total = 0.0;
        for (d, &v) in self.dims.iter().zip(x) {
            let y = d.y(v);
            if !(y > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            total += d.log_pdf_y(y);
        }
        Ok(total)
    }

    /// `sign * ((alpha - 1) / y - beta)` per dimension.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dims.len(), x.len())?;
        check_finite(x)?;
        self.dims
            .iter()
            .zip(x)
            .enumerate()
            .map(|(i, (d, &v))| {
                let y = d.y(v);
                if !(y > 0.0) {
                    return Err(Error::invalid(format!(
                        "gamma gradient requested outside the support in dimension {i}"
                    )));
                }
                Ok(d.sign * ((d.alpha - 1.0) / y - d.beta))
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| {
                let g = Gamma::new(d.alpha, 1.0 / d.beta).expect("validated parameters");
                d.shift + d.sign * g.sample(rng)
            })
            .collect()
    }
}

impl Prior for GammaModel {
    fn dim(&self) -> usize {
        self.dims.len()
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        GammaModel::log_prob(self, x)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad(x)
    }

    /// Defined only when every `alpha > 1`.
    fn mode(&self) -> Option<Vec<f64>> {
        self.dims
            .iter()
            .map(|d| (d.alpha > 1.0).then(|| d.shift + d.sign * (d.alpha - 1.0) / d.beta))
            .collect()
    }

    fn mean(&self) -> Option<Vec<f64>> {
        Some(self.dims.iter().map(|d| d.shift + d.sign * d.alpha / d.beta).collect())
    }
}

/// Method-of-moments fit per dimension.
///
/// The sign follows the sample skewness (non-negative skew keeps `+1`), the
/// shift sits just past the extreme sample on the open side, and
/// `alpha = mean(y)^2 / var(y)`, `beta = mean(y) / var(y)`.
pub fn fit_gamma(data: &PoseDataset) -> Result<GammaModel> {
    if data.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "gamma fit needs at least {MIN_SAMPLES} samples, got {}",
            data.len()
        )));
    }
    let n = data.len() as f64;
    let mut dims = Vec::with_capacity(data.dim);
    for d in 0..data.dim {
        let col = data.column(d);
        let mean = col.iter().sum::<f64>() / n;
        let m2 = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        if !(m2 > 0.0) {
            return Err(Error::invalid(format!("dimension {d} has zero variance")));
        }
        let m3 = col.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let sign = if m3 >= 0.0 { 1.0 } else { -1.0 };
        let extreme = col.iter().map(|x| sign * x).fold(f64::INFINITY, f64::min);
        let shift = sign * (extreme - SUPPORT_MARGIN);
        let ys: Vec<f64> = col.iter().map(|x| sign * (x - shift)).collect();
        let ym = ys.iter().sum::<f64>() / n;
        let yv = ys.iter().map(|y| (y - ym).powi(2)).sum::<f64>() / (n - 1.0);
        dims.push(GammaDim::new(ym * ym / yv, ym / yv, sign, shift)?);
    }
    GammaModel::new(dims)
}
