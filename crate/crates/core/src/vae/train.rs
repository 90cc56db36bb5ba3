use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{standard_noise, VaeLossBreakdown, VaeModel};
use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::posedata::rotation::rodrigues;
use crate::posedata::synth::rng_from_seed;
use crate::posedata::PoseDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 20, learning_rate: 1e-3, seed: 0, optimizer: Optimizer::adam() }
    }
}

impl TrainConfig {
    // A zero rate is allowed: it leaves the parameters untouched.
    fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.batch_size > n {
            return Err(Error::invalid(format!("batch size {} exceeds {} samples", self.batch_size, n)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::invalid("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Summary of a training run, stored alongside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub final_mean_loss: f64,
}

/// Mean loss over the dataset after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean: VaeLossBreakdown,
}

pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,l_kl,l_rec,l_orth,l_det1,l_reg,l_total\n");
    for e in trace {
        let m = &e.mean;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, m.l_kl, m.l_rec, m.l_orth, m.l_det1, m.l_reg, m.l_total
        ));
    }
    s
}

/// Mean loss over `xs`, each sample with its own fixed noise seed.
fn mean_loss(model: &VaeModel, xs: &[Vec<f64>], seeds: &[u64]) -> Result<VaeLossBreakdown> {
    let items: Vec<(&Vec<f64>, u64)> = xs.iter().zip(seeds.iter().copied()).collect();
    let parts = par::map(&items, |(x, s)| model.loss_with_noise(x, &standard_noise(model.latent_dim(), *s)));
    let mut total = VaeLossBreakdown::default();
    for p in parts {
        total.add(&p?);
    }
    Ok(total.scaled(1.0 / xs.len() as f64))
}

/// Minibatch training on axis-angle poses.
///
/// Each epoch shuffles the samples with the seeded generator and draws a fresh
/// noise seed per sample. Minibatch gradients are averaged in sample order.
/// The returned trace holds, for every epoch, the mean loss of the updated
/// model over the whole dataset evaluated with one fixed set of noise draws,
/// so the numbers are comparable across epochs.
pub fn train(model: &VaeModel, data: &PoseDataset, cfg: &TrainConfig) -> Result<(VaeModel, Vec<EpochLoss>)> {
    cfg.validate(data.len())?;
    check_dim(model.pose_dim(), data.dim)?;
    let xs: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|p| p.chunks(3).flat_map(|w| rodrigues([w[0], w[1], w[2]]).into_iter().flatten()).collect())
        .collect();

    let mut rng = rng_from_seed(cfg.seed);
    let eval_seeds: Vec<u64> = (0..xs.len()).map(|_| rng.random()).collect();
    let mut model = model.clone();
    let mut theta = model.flatten();
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let seeds: Vec<u64> = (0..xs.len()).map(|_| rng.random()).collect();
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<(usize, u64)> = batch.iter().map(|&i| (i, seeds[i])).collect();
            let grads = par::map(&items, |(i, s)| {
                model.backward_with_noise(&xs[*i], &standard_noise(model.latent_dim(), *s))
            });
            let mut g = vec![0.0; theta.len()];
            for r in grads {
                let (vg, _) = r?;
                g.iter_mut().zip(vg.flatten()).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            g.iter_mut().for_each(|v| *v *= inv);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in epoch {epoch}")));
            }
            if cfg.learning_rate == 0.0 {
                continue;
            }
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    theta.iter_mut().zip(&g).for_each(|(t, gv)| *t -= cfg.learning_rate * gv);
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for k in 0..theta.len() {
                        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g[k];
                        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g[k] * g[k];
                        theta[k] -= cfg.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                    }
                }
            }
            model.assign(&theta)?;
        }
        trace.push(EpochLoss { epoch, mean: mean_loss(&model, &xs, &eval_seeds)? });
    }
    Ok((model, trace))
}

impl TrainingMetadata {
    pub fn from_run(cfg: &TrainConfig, trace: &[EpochLoss]) -> Self {
        TrainingMetadata {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            optimizer: cfg.optimizer.name().to_string(),
            final_mean_loss: trace.last().map_or(f64::NAN, |e| e.mean.l_total),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::LossWeights;

    fn data(n: usize, seed: u64) -> PoseDataset {
        let mut rng = rng_from_seed(seed);
        let rows = (0..n)
            .map(|_| (0..6).map(|_| rng.random_range(-0.6..0.6)).collect())
            .collect();
        PoseDataset::new(rows, "test").unwrap()
    }

    fn tiny() -> VaeModel {
        VaeModel::init(2, 2, &[8, 8], LossWeights::default(), 1).unwrap()
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let cfg = TrainConfig { epochs: 3, batch_size: 10, learning_rate: 0.0, ..Default::default() };
        let (m, trace) = train(&tiny(), &data(40, 2), &cfg).unwrap();
        assert_eq!(m, tiny());
        assert!(trace.iter().all(|e| e.mean == trace[0].mean));
    }

    #[test]
    fn deterministic() {
        let cfg = TrainConfig { epochs: 3, batch_size: 8, learning_rate: 1e-2, ..Default::default() };
        let a = train(&tiny(), &data(40, 2), &cfg).unwrap();
        let b = train(&tiny(), &data(40, 2), &cfg).unwrap();
        assert_eq!(a.0.flatten(), b.0.flatten());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn sgd_reduces_loss() {
        let cfg = TrainConfig { epochs: 10, batch_size: 10, learning_rate: 5e-3, optimizer: Optimizer::Sgd, ..Default::default() };
        let (_, trace) = train(&tiny(), &data(60, 3), &cfg).unwrap();
        assert!(trace.last().unwrap().mean.l_total < trace[0].mean.l_total);
    }

    #[test]
    fn invalid_configs() {
        let d = data(10, 1);
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { batch_size: 11, ..Default::default() },
            TrainConfig { batch_size: 5, learning_rate: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(train(&tiny(), &d, &cfg).is_err());
        }
        let wrong = PoseDataset::new(vec![vec![0.0; 9]; 10], "x").unwrap();
        assert!(train(&tiny(), &wrong, &TrainConfig { batch_size: 5, ..Default::default() }).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let t = [EpochLoss { epoch: 1, mean: VaeLossBreakdown { l_total: 2.5, ..Default::default() } }];
        assert_eq!(loss_trace_csv(&t), "epoch,l_kl,l_rec,l_orth,l_det1,l_reg,l_total\n1,0,0,0,0,0,2.5\n");
    }
}
