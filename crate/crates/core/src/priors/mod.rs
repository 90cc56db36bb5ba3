//! Prior families behind a common log-density + gradient contract.
//!
//! All densities are evaluated in log space. Model files share one JSON
//! envelope:
//!
//! ```json
//! { "format": "pose-prior v1", "model_type": "mvn", "dim": 66,
//!   "params": { ... }, "fit_metadata": { "seed": null, "jitter": 0.0, ... } }
//! ```

pub mod boxlimit;
pub mod gamma;
pub mod gmm;
pub mod mvn;
pub mod temporal;

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::vae::{TrainingMetadata, VaeModel};

pub use self::boxlimit::{fit_box, BoxLimitModel};
pub use self::gamma::{fit_gamma, GammaDim, GammaModel};
pub use self::gmm::{fit_gmm_em, EmConfig, GmmComponent, GmmFit, GmmModel};
pub use self::mvn::{fit_mvn, MvnModel};
pub use self::temporal::{fit_temporal_gmm, TemporalGmmModel};

pub const MODEL_FORMAT: &str = "pose-prior v1";

/// A differentiable log-density over fixed-width real vectors.
pub trait Prior: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density (or log-penalty). May return `-inf` outside the support.
    fn log_prob(&self, x: &[f64]) -> Result<f64>;

    /// Gradient of [`Prior::log_prob`] with respect to `x`.
    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn mode(&self) -> Option<Vec<f64>> {
        None
    }

    fn mean(&self) -> Option<Vec<f64>> {
        None
    }
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("input contains non-finite values"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    Mvn,
    Gamma,
    Gmm,
    Box,
    TemporalGmm,
    Vae,
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelType::Mvn => "mvn",
            ModelType::Gamma => "gamma",
            ModelType::Gmm => "gmm",
            ModelType::Box => "box",
            ModelType::TemporalGmm => "temporal_gmm",
            ModelType::Vae => "vae",
        };
        f.write_str(s)
    }
}

/// Any fitted prior.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorModel {
    Mvn(MvnModel),
    Gamma(GammaModel),
    Gmm(GmmModel),
    Box(BoxLimitModel),
    TemporalGmm(TemporalGmmModel),
    Vae(VaeModel),
}

impl PriorModel {
    pub fn model_type(&self) -> ModelType {
        match self {
            PriorModel::Mvn(_) => ModelType::Mvn,
            PriorModel::Gamma(_) => ModelType::Gamma,
            PriorModel::Gmm(_) => ModelType::Gmm,
            PriorModel::Box(_) => ModelType::Box,
            PriorModel::TemporalGmm(_) => ModelType::TemporalGmm,
            PriorModel::Vae(_) => ModelType::Vae,
        }
    }

    fn inner(&self) -> &dyn Prior {
        match self {
            PriorModel::Mvn(m) => m,
            PriorModel::Gamma(m) => m,
            PriorModel::Gmm(m) => m,
            PriorModel::Box(m) => m,
            PriorModel::TemporalGmm(m) => m,
            PriorModel::Vae(m) => m,
        }
    }

    /// A point where the gradient is well defined, drawn from the model
    /// itself where possible. Gamma draws are kept away from the support
    /// boundary; box draws stay strictly inside the limits; VAE points are
    /// moderate random poses.
    pub fn sample_in_support<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PriorModel::Mvn(m) => m.sample(rng),
            PriorModel::Gmm(m) => m.sample(rng),
            PriorModel::TemporalGmm(m) => m.gmm().sample(rng),
            PriorModel::Box(m) => m.sample_interior(rng),
            PriorModel::Gamma(m) => loop {
                let x = m.sample(rng);
                let clear = m.dims().iter().zip(&x).all(|(d, v)| {
                    let y = d.sign * (v - d.shift);
                    y > 0.05 * d.alpha / d.beta
                });
                if clear {
                    break x;
                }
            },
            PriorModel::Vae(m) => {
                let n = Normal::new(0.0, 0.4).unwrap();
                (0..m.pose_dim()).map(|_| n.sample(rng)).collect()
            }
        }
    }

    fn params_json(&self) -> Result<serde_json::Value> {
        Ok(match self {
            PriorModel::Mvn(m) => serde_json::to_value(m)?,
            PriorModel::Gamma(m) => serde_json::to_value(m)?,
            PriorModel::Gmm(m) => serde_json::to_value(m)?,
            PriorModel::Box(m) => serde_json::to_value(m)?,
            PriorModel::TemporalGmm(m) => serde_json::to_value(m)?,
            PriorModel::Vae(m) => serde_json::to_value(m)?,
        })
    }

    fn from_params(kind: ModelType, params: serde_json::Value) -> Result<Self> {
        Ok(match kind {
            ModelType::Mvn => PriorModel::Mvn(serde_json::from_value(params)?),
            ModelType::Gamma => PriorModel::Gamma(serde_json::from_value(params)?),
            ModelType::Gmm => PriorModel::Gmm(serde_json::from_value(params)?),
            ModelType::Box => PriorModel::Box(serde_json::from_value(params)?),
            ModelType::TemporalGmm => PriorModel::TemporalGmm(serde_json::from_value(params)?),
            ModelType::Vae => PriorModel::Vae(serde_json::from_value(params)?),
        })
    }
}

impl Prior for PriorModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.inner().log_prob(x)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner().grad_log_prob(x)
    }

    fn mode(&self) -> Option<Vec<f64>> {
        self.inner().mode()
    }

    fn mean(&self) -> Option<Vec<f64>> {
        self.inner().mean()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetadata {
    pub seed: Option<u64>,
    pub jitter: f64,
    pub iterations: usize,
    pub final_loglik: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    model_type: ModelType,
    dim: usize,
    params: serde_json::Value,
    fit_metadata: FitMetadata,
}

/// Serializes a model into the shared JSON envelope.
pub fn model_to_json(model: &PriorModel, meta: &FitMetadata) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        model_type: model.model_type(),
        dim: model.dim(),
        params: model.params_json()?,
        fit_metadata: meta.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<(PriorModel, FitMetadata)> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::invalid(format!("unsupported model format `{}`", file.format)));
    }
    let model = PriorModel::from_params(file.model_type, file.params)?;
    if model.dim() != file.dim {
        return Err(Error::Dimension { expected: file.dim, got: model.dim() });
    }
    Ok((model, file.fit_metadata))
}

pub fn save_model(model: &PriorModel, meta: &FitMetadata, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model, meta)?)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<(PriorModel, FitMetadata)> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    model_from_json(&text)
}

/// Log-probabilities of many points, evaluated in parallel when enabled.
pub fn log_prob_batch<P: Prior + ?Sized>(prior: &P, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    par::map(xs, |x| prior.log_prob(x)).into_iter().collect()
}

/// Sequential twin of [`log_prob_batch`].
pub fn log_prob_batch_sequential<P: Prior + ?Sized>(prior: &P, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    par::map_sequential(xs, |x| prior.log_prob(x)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;

    fn mvn() -> PriorModel {
        PriorModel::Mvn(
            MvnModel::new(vec![0.1, -0.2], SymMatrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.3]]).unwrap())
                .unwrap(),
        )
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let meta = FitMetadata { seed: Some(3), jitter: 0.0, iterations: 0, final_loglik: Some(-12.345678901234567), training: None };
        let text = model_to_json(&mvn(), &meta).unwrap();
        let (back, back_meta) = model_from_json(&text).unwrap();
        assert_eq!(back, mvn());
        assert_eq!(back_meta, meta);
        assert_eq!(model_to_json(&back, &back_meta).unwrap(), text);
        assert!(text.contains("\"format\": \"pose-prior v1\""));
        assert!(text.contains("\"model_type\": \"mvn\""));
    }

    #[test]
    fn rejects_wrong_format_and_dim() {
        let text = model_to_json(&mvn(), &FitMetadata::default()).unwrap();
        assert!(model_from_json(&text.replace("pose-prior v1", "pose-prior v0")).is_err());
        assert!(model_from_json(&text.replace("\"dim\": 2", "\"dim\": 3")).is_err());
        assert!(model_from_json("{}").is_err());
    }

    #[test]
    fn batch_matches_sequential() {
        let m = mvn();
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.01, -(i as f64) * 0.02]).collect();
        assert_eq!(log_prob_batch(&m, &xs).unwrap(), log_prob_batch_sequential(&m, &xs).unwrap());
    }
}
