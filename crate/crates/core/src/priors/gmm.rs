//! Gaussian mixture prior and its EM fit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mvn::MvnModel;
use super::{check_finite, Prior};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{mean_and_covariance, SymMatrix};
use crate::par;
use crate::posedata::synth::rng_from_seed;
use crate::posedata::PoseDataset;
use crate::special::log_sum_exp;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const COLLAPSE_MASS: f64 = 1e-12;
const MAX_RESCUES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub gaussian: MvnModel,
}

/// Mixture of full-covariance Gaussians with positive weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmParams", into = "GmmParams")]
pub struct GmmModel {
    components: Vec<GmmComponent>,
    log_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmParams {
    components: Vec<GmmComponent>,
}

impl TryFrom<GmmParams> for GmmModel {
    type Error = Error;

    fn try_from(p: GmmParams) -> Result<Self> {
        GmmModel::new(p.components)
    }
}

impl From<GmmModel> for GmmParams {
    fn from(m: GmmModel) -> Self {
        GmmParams { components: m.components }
    }
}

impl GmmModel {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::invalid("mixture needs a component"))?;
        let dim = first.gaussian.mean().len();
        for c in &components {
            check_dim(dim, c.gaussian.mean().len())?;
            if !(c.weight > 0.0) {
                return Err(Error::invalid("mixture weights must be positive"));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(GmmModel { components, log_weights })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn dim(&self) -> usize {
        self.components[0].gaussian.mean().len()
    }

    fn joint_log_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| Ok(lw + c.gaussian.log_prob(x)?))
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(log_sum_exp(&self.joint_log_probs(x)?))
    }

    /// Posterior component membership probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let lp = self.joint_log_probs(x)?;
        let total = log_sum_exp(&lp);
        Ok(lp.iter().map(|v| (v - total).exp()).collect())
    }

    /// `sum_i r_i(x) * (-S_i^-1 (x - m_i))`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.responsibilities(x)?;
        let mut g = vec![0.0; x.len()];
        for (c, ri) in self.components.iter().zip(r) {
            for (gi, v) in g.iter_mut().zip(c.gaussian.grad(x)?) {
                *gi += ri * v;
            }
        }
        Ok(g)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].gaussian.sample(rng)
    }
}

impl Prior for GmmModel {
    fn dim(&self) -> usize {
        GmmModel::dim(self)
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        GmmModel::log_prob(self, x)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad(x)
    }

    /// Mean of the heaviest component (an approximation to the true mode).
    fn mode(&self) -> Option<Vec<f64>> {
        let best = self.components.iter().max_by(|a, b| a.weight.total_cmp(&b.weight))?;
        Some(best.gaussian.mean().to_vec())
    }

    fn mean(&self) -> Option<Vec<f64>> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (mi, v) in m.iter_mut().zip(c.gaussian.mean()) {
                *mi += c.weight * v;
            }
        }
        Some(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub k: usize,
    pub seed: u64,
    /// Added to every component covariance diagonal after each M-step.
    pub reg: f64,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { k: 1, seed: 0, reg: 1e-6, tol: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Data log-likelihood after initialization and after every M-step.
    pub loglik_trace: Vec<f64>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
    pub rescues: usize,
}

impl GmmFit {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace always has the initial entry")
    }
}

/// k-means++ seeding: the first centre uniformly, the rest with probability
/// proportional to squared distance from the nearest chosen centre.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].to_vec();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq(p, &c));
        }
        centers.push(c);
    }
    centers
}

struct EStep {
    /// Row-major `n x k` responsibilities.
    resp: Vec<f64>,
    point_loglik: Vec<f64>,
    total: f64,
}

fn e_step(model: &GmmModel, points: &[&[f64]]) -> Result<EStep> {
    let k = model.k();
    let rows = par::map(points, |x| -> Result<(Vec<f64>, f64)> {
        let lp = model.joint_log_probs(x)?;
        let lse = log_sum_exp(&lp);
        Ok((lp.iter().map(|v| (v - lse).exp()).collect(), lse))
    });
    let mut resp = Vec::with_capacity(points.len() * k);
    let mut point_loglik = Vec::with_capacity(points.len());
    for row in rows {
        let (r, lse) = row?;
        resp.extend(r);
        point_loglik.push(lse);
    }
    let total = point_loglik.iter().sum();
    if !f64::is_finite(total) {
        return Err(Error::Numerical("mixture log-likelihood is not finite".into()));
    }
    Ok(EStep { resp, point_loglik, total })
}

/// Fits a `k`-component mixture by expectation-maximization.
///
/// Means start from k-means++ seeds, weights are uniform and every
/// covariance starts at the global data covariance. The M-step uses the
/// maximum-likelihood weighted covariance (divisor `N_k`) plus `reg * I`.
/// A component whose total responsibility falls below 1e-12 is re-seeded
/// at the worst-explained point; more than three such rescues is an error.
pub fn fit_gmm_em(data: &PoseDataset, cfg: &EmConfig) -> Result<GmmFit> {
    let n = data.len();
    let d = data.dim;
    if cfg.k == 0 {
        return Err(Error::invalid("mixture needs k >= 1"));
    }
    if cfg.k > n {
        return Err(Error::invalid(format!("k = {} exceeds the {} available samples", cfg.k, n)));
    }
    if !(cfg.reg >= 0.0) || !(cfg.tol >= 0.0) || cfg.max_iter == 0 {
        return Err(Error::invalid("EM needs reg >= 0, tol >= 0 and max_iter >= 1"));
    }
    let points = data.rows();
    for p in &points {
        check_finite(p)?;
    }
    let (_, global_cov) = mean_and_covariance(&points)?;
    let init_cov = global_cov.add_diagonal(cfg.reg);

    let mut rng = rng_from_seed(cfg.seed);
    let centers = kmeans_plus_plus(&points, cfg.k, &mut rng);
    let w0 = 1.0 / cfg.k as f64;
    let mut components = Vec::with_capacity(cfg.k);
    for c in centers {
        components.push(GmmComponent { weight: w0, gaussian: MvnModel::new(c, init_cov.clone())? });
    }
    let mut model = normalized(components)?;

    let mut estep = e_step(&model, &points)?;
    let mut trace = vec![estep.total];
    let mut iterations = 0;
    let mut rescues = 0;
    let mut converged = false;

    while iterations < cfg.max_iter {
        let k = model.k();
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let mass: f64 = (0..n).map(|i| estep.resp[i * k + j]).sum();
            if mass < COLLAPSE_MASS {
                rescues += 1;
                if rescues > MAX_RESCUES {
                    return Err(Error::Numerical(format!(
                        "mixture component {j} collapsed after {MAX_RESCUES} rescues"
                    )));
                }
                let worst = estep
                    .point_loglik
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                components.push(GmmComponent {
                    weight: 1.0 / n as f64,
                    gaussian: MvnModel::new(points[worst].to_vec(), init_cov.clone())?,
                });
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, p) in points.iter().enumerate() {
                let r = estep.resp[i * k + j];
                for (m, v) in mean.iter_mut().zip(p.iter()) {
                    *m += r * v;
                }
            }
            for m in mean.iter_mut() {
                *m /= mass;
            }
            let mut cov = vec![0.0; d * d];
            let mut centered = vec![0.0; d];
            for (i, p) in points.iter().enumerate() {
                let r = estep.resp[i * k + j];
                for a in 0..d {
                    centered[a] = p[a] - mean[a];
                }
                for a in 0..d {
                    for b in a..d {
                        cov[a * d + b] += r * centered[a] * centered[b];
                    }
                }
            }
            for a in 0..d {
                for b in a..d {
                    let v = cov[a * d + b] / mass;
                    cov[a * d + b] = v;
                    cov[b * d + a] = v;
                }
            }
            let cov = SymMatrix::new(d, cov)?.add_diagonal(cfg.reg);
            components.push(GmmComponent { weight: mass / n as f64, gaussian: MvnModel::new(mean, cov)? });
        }
        model = normalized(components)?;
        iterations += 1;

        let prev = estep.total;
        estep = e_step(&model, &points)?;
        trace.push(estep.total);
        if (estep.total - prev) / prev.abs().max(f64::MIN_POSITIVE) < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(GmmFit { model, loglik_trace: trace, iterations, converged, rescues })
}

/// Rescales weights to sum to one (guards accumulated rounding).
fn normalized(mut components: Vec<GmmComponent>) -> Result<GmmModel> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
    GmmModel::new(components)
}
