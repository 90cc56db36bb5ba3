//! Analytic versus central finite-difference gradient comparison.

use serde::Serialize;

use crate::error::Result;
use crate::par;
use crate::posedata::synth::rng_from_seed;
use crate::priors::{ModelType, Prior, PriorModel};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const VAE_STEP: f64 = 1e-4;
/// Reports above this are treated as failures by the command line.
pub const FAIL_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub model_type: ModelType,
    pub points: usize,
    pub step: f64,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Central differences of `log_prob` along every coordinate.
pub fn central_difference<P: Prior + ?Sized>(prior: &P, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let up = prior.log_prob(&p)?;
        p[i] = x[i] - h;
        let down = prior.log_prob(&p)?;
        p[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|a - n|_inf / max(|a|_inf, |n|_inf, 1e-12)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-12)
}

pub fn point_error<P: Prior + ?Sized>(prior: &P, x: &[f64], h: f64) -> Result<f64> {
    let a = prior.grad_log_prob(x)?;
    let n = central_difference(prior, x, h)?;
    Ok(relative_error(&a, &n))
}

pub fn default_step(model: &PriorModel) -> f64 {
    match model {
        PriorModel::Vae(_) => VAE_STEP,
        _ => DEFAULT_STEP,
    }
}

/// Checks `count` seeded points drawn inside the model's support.
pub fn grad_check(model: &PriorModel, count: usize, seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = rng_from_seed(seed);
    let points: Vec<Vec<f64>> = (0..count).map(|_| model.sample_in_support(&mut rng)).collect();
    let errors: Vec<f64> = par::map(&points, |x| point_error(model, x, h)).into_iter().collect::<Result<_>>()?;
    let max = errors.iter().fold(0.0f64, |m, e| m.max(*e));
    let mean = if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    Ok(GradCheckReport { model_type: model.model_type(), points: count, step: h, max_rel_error: max, mean_rel_error: mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::BoxLimitModel;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
    }

    #[test]
    fn box_interior_is_exactly_zero() {
        let m = PriorModel::Box(BoxLimitModel::new(vec![-1.0; 3], vec![1.0; 3], 50.0).unwrap());
        let r = grad_check(&m, 20, 1, DEFAULT_STEP).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }
}
