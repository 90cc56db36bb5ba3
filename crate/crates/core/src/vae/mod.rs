//! Variational autoencoder over per-joint rotation matrices.
//!
//! The encoder maps the flattened matrices (`9 * J` values) to a latent mean
//! and log-variance, the decoder maps a latent sample back to `J` raw 3x3
//! matrices. Training minimizes a weighted sum of five terms (KL, reconstruction,
//! orthogonality, unit determinant and a pose-magnitude regularizer) with
//! hand-written backpropagation. After training, `|mu(encode(R(p)))|^2` is used
//! as a prior energy over axis-angle poses `p`.

pub mod loss;
pub mod mlp;
mod train;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::posedata::rotation::{rodrigues, rodrigues_jacobian};
use crate::posedata::synth::rng_from_seed;
use crate::posedata::RotationMatrixSet;
use crate::priors::{check_finite, Prior};

pub use self::mlp::{Activation, Layer, MlpGrads, MlpParams};
pub use self::train::{loss_trace_csv, train, EpochLoss, Optimizer, TrainConfig, TrainingMetadata};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LATENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub kl: f64,
    pub rec: f64,
    pub orth: f64,
    pub det1: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { kl: 1.0, rec: 1.0, orth: 1.0, det1: 1.0, reg: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights { kl: 0.0, rec: 0.0, orth: 0.0, det1: 0.0, reg: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.kl, self.rec, self.orth, self.det1, self.reg];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLossBreakdown {
    pub l_kl: f64,
    pub l_rec: f64,
    pub l_orth: f64,
    pub l_det1: f64,
    pub l_reg: f64,
    pub l_total: f64,
}

impl VaeLossBreakdown {
    fn combine(w: &LossWeights, l_kl: f64, l_rec: f64, l_orth: f64, l_det1: f64, l_reg: f64) -> Self {
        let l_total = w.kl * l_kl + w.rec * l_rec + w.orth * l_orth + w.det1 * l_det1 + w.reg * l_reg;
        VaeLossBreakdown { l_kl, l_rec, l_orth, l_det1, l_reg, l_total }
    }

    pub(crate) fn add(&mut self, o: &Self) {
        self.l_kl += o.l_kl;
        self.l_rec += o.l_rec;
        self.l_orth += o.l_orth;
        self.l_det1 += o.l_det1;
        self.l_reg += o.l_reg;
        self.l_total += o.l_total;
    }

    pub(crate) fn scaled(&self, s: f64) -> Self {
        VaeLossBreakdown {
            l_kl: self.l_kl * s,
            l_rec: self.l_rec * s,
            l_orth: self.l_orth * s,
            l_det1: self.l_det1 * s,
            l_reg: self.l_reg * s,
            l_total: self.l_total * s,
        }
    }
}

/// Gradients of the total loss for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl VaeGrads {
    /// Encoder parameters first, then decoder, matching [`VaeModel::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.decoder.flatten());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VaeRepr", into = "VaeRepr")]
pub struct VaeModel {
    latent_dim: usize,
    encoder: MlpParams,
    decoder: MlpParams,
    weights: LossWeights,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeRepr {
    input_dim: usize,
    latent_dim: usize,
    encoder: MlpParams,
    decoder: MlpParams,
    loss_weights: LossWeights,
}

impl TryFrom<VaeRepr> for VaeModel {
    type Error = Error;

    fn try_from(r: VaeRepr) -> Result<Self> {
        check_dim(r.input_dim, r.encoder.in_dim())?;
        let m = VaeModel::from_parts(r.encoder, r.decoder, r.loss_weights)?;
        check_dim(r.latent_dim, m.latent_dim)?;
        Ok(m)
    }
}

impl From<VaeModel> for VaeRepr {
    fn from(m: VaeModel) -> Self {
        VaeRepr {
            input_dim: m.input_dim(),
            latent_dim: m.latent_dim,
            encoder: m.encoder,
            decoder: m.decoder,
            loss_weights: m.weights,
        }
    }
}

/// Intermediate values of one loss evaluation, kept for the backward pass.
struct ForwardPass {
    enc: mlp::Trace,
    dec: mlp::Trace,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    clamped: Vec<bool>,
    eps: Vec<f64>,
    breakdown: VaeLossBreakdown,
    reg_grad: Vec<f64>,
}

/// Standard normal noise of length `n` from a seeded generator.
pub fn standard_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `z = mu + exp(logvar / 2) * eps` with `eps` drawn from `seed`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], seed: u64) -> Result<Vec<f64>> {
    check_dim(mu.len(), logvar.len())?;
    let eps = standard_noise(mu.len(), seed);
    Ok(reparameterize_with(mu, logvar, &eps))
}

fn reparameterize_with(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter().zip(logvar).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect()
}

impl VaeModel {
    /// Randomly initialized model: encoder `9J -> hidden.. -> 2L`, decoder
    /// `L -> hidden.. -> 9J`, tanh on hidden layers.
    pub fn init(joints: usize, latent_dim: usize, hidden: &[usize], weights: LossWeights, seed: u64) -> Result<Self> {
        if joints == 0 || latent_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("joint count, latent and hidden sizes must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let input = 9 * joints;
        let mut enc_sizes = vec![input];
        enc_sizes.extend_from_slice(hidden);
        enc_sizes.push(2 * latent_dim);
        let mut dec_sizes = vec![latent_dim];
        dec_sizes.extend_from_slice(hidden);
        dec_sizes.push(input);
        let encoder = MlpParams::init(&enc_sizes, &mut rng);
        let decoder = MlpParams::init(&dec_sizes, &mut rng);
        VaeModel::from_parts(encoder, decoder, weights)
    }

    pub fn from_parts(encoder: MlpParams, decoder: MlpParams, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let out = encoder.out_dim();
        if out == 0 || !out.is_multiple_of(2) {
            return Err(Error::invalid("encoder output must hold a mean and a log-variance"));
        }
        let latent_dim = out / 2;
        check_dim(latent_dim, decoder.in_dim())?;
        check_dim(encoder.in_dim(), decoder.out_dim())?;
        if !encoder.in_dim().is_multiple_of(9) {
            return Err(Error::invalid("input width must be a multiple of 9"));
        }
        Ok(VaeModel { latent_dim, encoder, decoder, weights })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn joints(&self) -> usize {
        self.input_dim() / 9
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Width of the axis-angle pose the energy is defined over.
    pub fn pose_dim(&self) -> usize {
        3 * self.joints()
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) -> Result<()> {
        weights.validate()?;
        self.weights = weights;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.decoder.flatten());
        v
    }

    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        check_dim(self.param_count(), values.len())?;
        let used = self.encoder.assign(values);
        self.decoder.assign(&values[used..]);
        Ok(())
    }

    fn split_latent(&self, out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let (mu, raw) = out.split_at(self.latent_dim);
        let clamped = raw.iter().map(|v| !(LOGVAR_MIN..=LOGVAR_MAX).contains(v)).collect();
        let logvar = raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        (mu.to_vec(), logvar, clamped)
    }

    /// Latent mean and (clamped) log-variance for flattened matrices.
    pub fn encode_flat(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.encoder.forward(x)?;
        let (mu, lv, _) = self.split_latent(t.output());
        Ok((mu, lv))
    }

    pub fn encode(&self, r: &RotationMatrixSet) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.joints(), r.joints())?;
        self.encode_flat(&r.flatten())
    }

    /// Raw decoder output; the matrices are not projected onto rotations.
    pub fn decode(&self, z: &[f64]) -> Result<RotationMatrixSet> {
        check_dim(self.latent_dim, z.len())?;
        RotationMatrixSet::from_flat(self.decoder.forward(z)?.output())
    }

    fn forward_pass(&self, x: &[f64], eps: &[f64]) -> Result<ForwardPass> {
        let enc = self.encoder.forward(x)?;
        let (mu, logvar, clamped) = self.split_latent(enc.output());
        let z = reparameterize_with(&mu, &logvar, eps);
        let dec = self.decoder.forward(&z)?;
        let r_hat = dec.output();
        let l_kl = loss::kl_loss(&mu, &logvar)?;
        let l_rec = loss::rec_loss(x, r_hat)?;
        let l_orth = loss::orth_loss(r_hat)?;
        let l_det1 = loss::det1_loss(r_hat)?;
        let (_, l_reg, reg_grad) = loss::reg_terms(r_hat)?;
        let breakdown = VaeLossBreakdown::combine(&self.weights, l_kl, l_rec, l_orth, l_det1, l_reg);
        Ok(ForwardPass { enc, dec, mu, logvar, clamped, eps: eps.to_vec(), breakdown, reg_grad })
    }

    /// Loss for flattened input with explicit reparameterization noise.
    pub fn loss_with_noise(&self, x: &[f64], eps: &[f64]) -> Result<VaeLossBreakdown> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.latent_dim, eps.len())?;
        Ok(self.forward_pass(x, eps)?.breakdown)
    }

    /// Encode, sample, decode and evaluate all five terms.
    pub fn total_loss(&self, r: &RotationMatrixSet, seed: u64) -> Result<VaeLossBreakdown> {
        check_dim(self.joints(), r.joints())?;
        self.loss_with_noise(&r.flatten(), &standard_noise(self.latent_dim, seed))
    }

    /// Exact gradient of `l_total` for fixed noise `eps`.
    pub fn backward_with_noise(&self, x: &[f64], eps: &[f64]) -> Result<(VaeGrads, VaeLossBreakdown)> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.latent_dim, eps.len())?;
        let fp = self.forward_pass(x, eps)?;
        let w = &self.weights;
        let r_hat = fp.dec.output();

        let mut g_out = vec![0.0; r_hat.len()];
        let mut accumulate = |scale: f64, g: Vec<f64>| {
            if scale != 0.0 {
                g_out.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
            }
        };
        accumulate(w.rec, loss::rec_grad(x, r_hat));
        accumulate(w.orth, loss::orth_grad(r_hat));
        accumulate(w.det1, loss::det1_grad(r_hat));
        accumulate(w.reg, fp.reg_grad.clone());
        let (dec_grads, g_z) = self.decoder.backward(&fp.dec, &g_out);

        let (kl_mu, kl_lv) = loss::kl_grad(&fp.mu, &fp.logvar);
        let l = self.latent_dim;
        let mut g_enc_out = vec![0.0; 2 * l];
        for i in 0..l {
            let sd = (0.5 * fp.logvar[i]).exp();
            g_enc_out[i] = g_z[i] + w.kl * kl_mu[i];
            g_enc_out[l + i] = if fp.clamped[i] { 0.0 } else { g_z[i] * 0.5 * sd * fp.eps[i] + w.kl * kl_lv[i] };
        }
        let (enc_grads, _) = self.encoder.backward(&fp.enc, &g_enc_out);
        Ok((VaeGrads { encoder: enc_grads, decoder: dec_grads }, fp.breakdown))
    }

    pub fn backward(&self, r: &RotationMatrixSet, seed: u64) -> Result<(VaeGrads, VaeLossBreakdown)> {
        check_dim(self.joints(), r.joints())?;
        self.backward_with_noise(&r.flatten(), &standard_noise(self.latent_dim, seed))
    }

    fn pose_to_flat(&self, pose: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.pose_dim(), pose.len())?;
        check_finite(pose)?;
        Ok(pose.chunks(3).flat_map(|w| rodrigues([w[0], w[1], w[2]]).into_iter().flatten()).collect())
    }

    /// `|mu|^2` of the encoded pose.
    pub fn energy(&self, pose: &[f64]) -> Result<f64> {
        let (mu, _) = self.encode_flat(&self.pose_to_flat(pose)?)?;
        Ok(mu.iter().map(|v| v * v).sum())
    }

    /// Gradient of [`VaeModel::energy`] with respect to the axis-angle pose.
    pub fn energy_grad(&self, pose: &[f64]) -> Result<Vec<f64>> {
        let x = self.pose_to_flat(pose)?;
        let t = self.encoder.forward(&x)?;
        let mut g_out = vec![0.0; 2 * self.latent_dim];
        for (g, m) in g_out.iter_mut().zip(&t.output()[..self.latent_dim]) {
            *g = 2.0 * m;
        }
        let (_, g_x) = self.encoder.backward(&t, &g_out);
        let mut grad = Vec::with_capacity(pose.len());
        for (w, g) in pose.chunks(3).zip(g_x.chunks(9)) {
            let jac = rodrigues_jacobian([w[0], w[1], w[2]]);
            for d in &jac {
                grad.push(d.iter().flatten().zip(g).map(|(a, b)| a * b).sum());
            }
        }
        Ok(grad)
    }
}

/// Free-function form of [`VaeModel::energy`].
pub fn vae_prior_energy(model: &VaeModel, pose: &[f64]) -> Result<f64> {
    model.energy(pose)
}

impl Prior for VaeModel {
    fn dim(&self) -> usize {
        self.pose_dim()
    }

    fn log_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.energy(x)?)
    }

    fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.energy_grad(x)?.into_iter().map(|g| -g).collect())
    }
}
