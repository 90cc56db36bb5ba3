//! Synthetic pose generation.
//!
//! Every dimension gets its own generator. One-sided gamma generators
//! (`sign = -1` mirrors the support) mimic joints that bend in only one
//! direction, such as the knee.
//!
//! Randomness comes from [`SynthRng`] (ChaCha8 seeded through
//! `seed_from_u64`), drawing samples in row-major order, so a fixed
//! `(spec, seed)` always yields the same bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{MotionSequence, PoseDataset};
use crate::error::{Error, Result};

/// The generator behind every seeded code path in this crate.
pub type SynthRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn default_sign() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DimGenerator {
    Normal {
        mu: f64,
        sigma: f64,
    },
    /// `shift + sign * Gamma(alpha, rate = beta)`.
    Gamma {
        alpha: f64,
        beta: f64,
        #[serde(default = "default_sign")]
        sign: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Two-component normal mixture; `weight` is the probability of the first.
    Mixture {
        weight: f64,
        mu1: f64,
        sigma1: f64,
        mu2: f64,
        sigma2: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

enum Sampler {
    Normal(Normal<f64>),
    Gamma { dist: Gamma<f64>, sign: f64, shift: f64 },
    Mixture { weight: f64, first: Normal<f64>, second: Normal<f64> },
    Uniform(Uniform<f64>),
}

impl Sampler {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Gamma { dist, sign, shift } => shift + sign * dist.sample(rng),
            Sampler::Mixture { weight, first, second } => {
                if rng.random::<f64>() < *weight {
                    first.sample(rng)
                } else {
                    second.sample(rng)
                }
            }
            Sampler::Uniform(d) => d.sample(rng),
        }
    }
}

fn finite(vals: &[f64]) -> bool {
    vals.iter().all(|v| v.is_finite())
}

impl DimGenerator {
    fn sampler(&self) -> Result<Sampler> {
        let bad = |msg: &str| Error::invalid(format!("{msg} in {self:?}"));
        match *self {
            DimGenerator::Normal { mu, sigma } => {
                if !finite(&[mu, sigma]) || sigma <= 0.0 {
                    return Err(bad("sigma must be positive"));
                }
                Ok(Sampler::Normal(Normal::new(mu, sigma).map_err(|_| bad("bad normal"))?))
            }
            DimGenerator::Gamma { alpha, beta, sign, shift } => {
                if !finite(&[alpha, beta, shift]) || alpha <= 0.0 || beta <= 0.0 {
                    return Err(bad("alpha and beta must be positive"));
                }
                if sign != 1.0 && sign != -1.0 {
                    return Err(bad("sign must be +1 or -1"));
                }
                let dist = Gamma::new(alpha, 1.0 / beta).map_err(|_| bad("bad gamma"))?;
                Ok(Sampler::Gamma { dist, sign, shift })
            }
            DimGenerator::Mixture { weight, mu1, sigma1, mu2, sigma2 } => {
                if !finite(&[weight, mu1, sigma1, mu2, sigma2]) || sigma1 <= 0.0 || sigma2 <= 0.0 {
                    return Err(bad("sigmas must be positive"));
                }
                if !(0.0..=1.0).contains(&weight) {
                    return Err(bad("weight must lie in [0, 1]"));
                }
                Ok(Sampler::Mixture {
                    weight,
                    first: Normal::new(mu1, sigma1).map_err(|_| bad("bad normal"))?,
                    second: Normal::new(mu2, sigma2).map_err(|_| bad("bad normal"))?,
                })
            }
            DimGenerator::Uniform { lo, hi } => {
                if !finite(&[lo, hi]) || lo >= hi {
                    return Err(bad("lo must be below hi"));
                }
                Ok(Sampler::Uniform(Uniform::new(lo, hi).map_err(|_| bad("bad uniform"))?))
            }
        }
    }
}

/// Constant-velocity motion: the first frame is drawn from the per-dimension
/// generators, then `pose_t = pose_0 + velocity * t + N(0, noise^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub dt: f64,
    pub velocity: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dims: Vec<DimGenerator>,
    pub count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceSpec>,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn samplers(&self) -> Result<Vec<Sampler>> {
        if self.dims.is_empty() {
            return Err(Error::invalid("synthetic spec has no dimensions"));
        }
        if self.count == 0 {
            return Err(Error::invalid("synthetic spec count must be at least 1"));
        }
        self.dims.iter().map(DimGenerator::sampler).collect()
    }
}

/// Draws `spec.count` i.i.d. samples.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<PoseDataset> {
    let samplers = spec.samplers()?;
    let mut rng = rng_from_seed(seed);
    let samples = (0..spec.count)
        .map(|_| samplers.iter().map(|s| s.draw(&mut rng)).collect())
        .collect();
    PoseDataset::new(samples, format!("synthetic (chacha8 seed={seed})"))
}

/// Generates a `spec.count`-frame constant-velocity sequence.
pub fn synth_sequence(spec: &SynthSpec, seed: u64) -> Result<MotionSequence> {
    let seq = spec
        .sequence
        .as_ref()
        .ok_or_else(|| Error::invalid("synthetic spec has no `sequence` section"))?;
    let samplers = spec.samplers()?;
    crate::error::check_dim(samplers.len(), seq.velocity.len())?;
    if !(seq.dt > 0.0) || !seq.dt.is_finite() {
        return Err(Error::invalid("sequence dt must be positive"));
    }
    if !(seq.noise >= 0.0) || !finite(&seq.velocity) {
        return Err(Error::invalid("sequence noise must be non-negative and velocity finite"));
    }
    if spec.count < 2 {
        return Err(Error::invalid("a sequence needs at least 2 frames"));
    }
    let mut rng = rng_from_seed(seed);
    let start: Vec<f64> = samplers.iter().map(|s| s.draw(&mut rng)).collect();
    constant_velocity(&start, &seq.velocity, seq.dt, spec.count, seq.noise, &mut rng)
}

/// Frames `start + velocity * (k * dt)` with optional Gaussian jitter.
pub fn constant_velocity<R: Rng>(
    start: &[f64],
    velocity: &[f64],
    dt: f64,
    frames: usize,
    noise: f64,
    rng: &mut R,
) -> Result<MotionSequence> {
    crate::error::check_dim(start.len(), velocity.len())?;
    let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE))
        .map_err(|_| Error::invalid("bad noise level"))?;
    let mut times = Vec::with_capacity(frames);
    let mut poses = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = k as f64 * dt;
        times.push(t);
        poses.push(
            start
                .iter()
                .zip(velocity)
                .map(|(s, v)| {
                    let e = if noise > 0.0 { jitter.sample(rng) } else { 0.0 };
                    s + v * t + e
                })
                .collect(),
        );
    }
    MotionSequence::new(times, poses)
}
