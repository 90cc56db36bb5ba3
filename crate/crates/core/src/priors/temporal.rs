use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm_em, EmConfig, GmmFit, GmmModel};
use super::Prior;
use crate::error::{Error, Result};
use crate::posedata::{PoseDataset, TemporalDelta};

/// Mixture over stacked motion deltas `(dt, dtheta_1, ..., dtheta_D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemporalGmmModel(pub GmmModel);

impl TemporalGmmModel {
    pub fn gmm(&self) -> &GmmModel {
        &self.0
    }

    /// Width of the pose part (the stacked vector has one more entry).
    pub fn pose_dim(&self) -> usize {
        self.0.dim() - 1
    }

    pub fn delta_log_prob(&self, delta: &TemporalDelta) -> Result<f64> {
        self.0.log_prob(&delta.stacked())
    }
}

impl Prior for TemporalGmmModel {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.0.log_prob(x)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.grad(x)
    }

    fn mode(&self) -> Option<Vec<f64>> {
        Prior::mode(&self.0)
    }

    fn mean(&self) -> Option<Vec<f64>> {
        Prior::mean(&self.0)
    }
}

/// Stacks the deltas as `(dt, dtheta)` rows.
pub fn stack_deltas(deltas: &[TemporalDelta]) -> Result<PoseDataset> {
    if deltas.is_empty() {
        return Err(Error::invalid("no temporal deltas to fit"));
    }
    let mut columns = vec!["dt".to_string()];
    columns.extend((0..deltas[0].dtheta.len()).map(|i| format!("dtheta{i}")));
    PoseDataset::new(deltas.iter().map(TemporalDelta::stacked).collect(), "temporal deltas")?
        .with_columns(columns)
}

pub fn fit_temporal_gmm(deltas: &[TemporalDelta], cfg: &EmConfig) -> Result<(TemporalGmmModel, GmmFit)> {
    let data = stack_deltas(deltas)?;
    let fit = fit_gmm_em(&data, cfg)?;
    Ok((TemporalGmmModel(fit.model.clone()), fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::compute_deltas;
    use crate::posedata::synth::{constant_velocity, rng_from_seed};

    #[test]
    fn empty_deltas_rejected() {
        assert!(fit_temporal_gmm(&[], &EmConfig::default()).is_err());
    }

    #[test]
    fn constant_velocity_scores_consistent_delta_higher() {
        let mut rng = rng_from_seed(3);
        let velocity = [0.5, -0.2, 0.1];
        let seq = constant_velocity(&[0.1, 0.2, 0.3], &velocity, 1.0 / 30.0, 300, 1e-3, &mut rng).unwrap();
        let deltas = compute_deltas(&seq);
        let (model, _) = fit_temporal_gmm(&deltas, &EmConfig { k: 1, ..Default::default() }).unwrap();
        let dt = 1.0 / 30.0;
        let consistent = TemporalDelta { dt, dtheta: velocity.iter().map(|v| v * dt).collect() };
        let fast = TemporalDelta { dt, dtheta: velocity.iter().map(|v| 10.0 * v * dt).collect() };
        assert!(model.delta_log_prob(&consistent).unwrap() > model.delta_log_prob(&fast).unwrap());
        assert_eq!(model.pose_dim(), 3);
    }
}
