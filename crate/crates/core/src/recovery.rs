//! Pose recovery from noisy partial observations, regularized by a prior.
//!
//! Minimizes `E(x) = sum_{d observed} (x_d - obs_d)^2 / (2 sigma^2) - lambda * log p(x)`
//! by gradient descent with a backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::priors::{check_finite, Prior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub values: Vec<f64>,
    pub noise_sigma: f64,
    /// Observed dimensions; all observed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl Observation {
    pub fn full(values: Vec<f64>, noise_sigma: f64) -> Self {
        Observation { values, noise_sigma, mask: None }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.mask.clone().unwrap_or_else(|| vec![true; self.values.len()])
    }

    fn validate(&self) -> Result<()> {
        check_finite(&self.values)?;
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be positive"));
        }
        if let Some(m) = &self.mask {
            check_dim(self.values.len(), m.len())?;
            if !m.iter().any(|&b| b) {
                return Err(Error::invalid("observation mask selects no dimension"));
            }
        }
        if self.values.is_empty() {
            return Err(Error::EmptyBody);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub max_iter: usize,
    /// Initial step length of the line search.
    pub step: f64,
    /// Stop once the largest gradient entry falls below this.
    pub tol: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig { max_iter: 10_000, step: 1.0, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub estimate: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 30;

struct Objective<'a, P: Prior + ?Sized> {
    obs: &'a [f64],
    mask: Vec<bool>,
    inv_var: f64,
    prior: &'a P,
    lambda: f64,
}

impl<P: Prior + ?Sized> Objective<'_, P> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let data: f64 = x
            .iter()
            .zip(self.obs)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum::<f64>()
            * 0.5
            * self.inv_var;
        if self.lambda == 0.0 {
            return Ok(data);
        }
        let lp = self.prior.log_prob(x)?;
        Ok(if lp == f64::NEG_INFINITY { f64::INFINITY } else { data - self.lambda * lp })
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g: Vec<f64> = x
            .iter()
            .zip(self.obs)
            .zip(&self.mask)
            .map(|((a, b), &m)| if m { (a - b) * self.inv_var } else { 0.0 })
            .collect();
        if self.lambda != 0.0 {
            let gp = self.prior.grad_log_prob(x)?;
            g.iter_mut().zip(gp).for_each(|(a, b)| *a -= self.lambda * b);
        }
        Ok(g)
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn recover_pose<P: Prior + ?Sized>(
    obs: &Observation,
    prior: &P,
    lambda: f64,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    obs.validate()?;
    check_dim(prior.dim(), obs.values.len())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda must be finite and non-negative"));
    }
    if cfg.max_iter == 0 || !(cfg.step > 0.0) || !(cfg.tol > 0.0) {
        return Err(Error::invalid("recovery needs max_iter > 0, step > 0 and tol > 0"));
    }
    let f = Objective {
        obs: &obs.values,
        mask: obs.mask(),
        inv_var: 1.0 / (obs.noise_sigma * obs.noise_sigma),
        prior,
        lambda,
    };

    let fill = |source: Option<Vec<f64>>| -> Vec<f64> {
        obs.values
            .iter()
            .zip(&f.mask)
            .enumerate()
            .map(|(d, (v, &m))| if m { *v } else { source.as_ref().map_or(0.0, |s| s[d]) })
            .collect()
    };
    let mut x = fill(prior.mode());
    let mut e = f.value(&x)?;
    if e == f64::INFINITY {
        x = fill(prior.mean());
        e = f.value(&x)?;
        if e == f64::INFINITY {
            return Err(Error::Numerical("prior assigns zero density to the initial pose".into()));
        }
    }

    let mut trace = Vec::new();
    let mut t = cfg.step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        trace.push(e);
        let g = f.grad(&x)?;
        if norm_inf(&g) < cfg.tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let ec = f.value(&cand)?;
            if ec < e {
                accepted = Some((cand, ec));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, ec)) => {
                x = cand;
                e = ec;
                t *= 2.0;
            }
            // no decrease possible at this resolution
            None => break,
        }
    }
    if !converged && iterations == cfg.max_iter {
        trace.push(e);
    }
    Ok(RecoveryResult { estimate: x, objective_trace: trace, iterations_used: iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::priors::{BoxLimitModel, MvnModel};

    fn mvn() -> MvnModel {
        MvnModel::new(
            vec![0.2, -0.1, 0.4],
            SymMatrix::from_rows(&[vec![0.5, 0.1, 0.0], vec![0.1, 0.3, 0.05], vec![0.0, 0.05, 0.2]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_lambda_returns_observation() {
        let obs = Observation::full(vec![1.0, -2.0, 0.5], 0.3);
        let r = recover_pose(&obs, &mvn(), 0.0, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.estimate, obs.values);
        assert_eq!(r.iterations_used, 1);
        assert!(r.converged);
    }

    #[test]
    fn trace_non_increasing() {
        let obs = Observation::full(vec![1.0, -2.0, 0.5], 0.3);
        let r = recover_pose(&obs, &mvn(), 2.0, &RecoveryConfig::default()).unwrap();
        assert!(r.converged);
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn larger_lambda_moves_toward_mean() {
        let obs = Observation::full(vec![1.0, -2.0, 0.5], 0.3);
        let m = mvn();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.5, 2.0, 10.0, 100.0] {
            let r = recover_pose(&obs, &m, lambda, &RecoveryConfig::default()).unwrap();
            let d: f64 = r.estimate.iter().zip(m.mean()).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn unobserved_dims_start_at_mode() {
        let obs = Observation { values: vec![1.0, 0.0, 0.5], noise_sigma: 0.3, mask: Some(vec![true, false, true]) };
        let cfg = RecoveryConfig { max_iter: 1, ..Default::default() };
        let r = recover_pose(&obs, &mvn(), 1.0, &cfg).unwrap();
        assert_eq!(r.objective_trace.len(), 2);
        let r = recover_pose(&obs, &mvn(), 1.0, &RecoveryConfig::default()).unwrap();
        assert!(r.converged);
    }

    #[test]
    fn rejects_bad_input() {
        let m = mvn();
        let cfg = RecoveryConfig::default();
        assert!(recover_pose(&Observation::full(vec![0.0; 2], 0.3), &m, 1.0, &cfg).is_err());
        assert!(recover_pose(&Observation::full(vec![0.0; 3], 0.0), &m, 1.0, &cfg).is_err());
        assert!(recover_pose(&Observation::full(vec![0.0; 3], 0.3), &m, -1.0, &cfg).is_err());
        let none = Observation { values: vec![0.0; 3], noise_sigma: 0.3, mask: Some(vec![false; 3]) };
        assert!(recover_pose(&none, &m, 1.0, &cfg).is_err());
    }

    #[test]
    fn box_prior_pulls_inside() {
        let b = BoxLimitModel::new(vec![-1.0, -1.0], vec![1.0, 1.0], 100.0).unwrap();
        let obs = Observation::full(vec![2.0, 0.0], 1.0);
        let r = recover_pose(&obs, &b, 1.0, &RecoveryConfig::default()).unwrap();
        assert!(r.estimate[0] < 1.01 && r.estimate[0] > 1.0);
    }
}
