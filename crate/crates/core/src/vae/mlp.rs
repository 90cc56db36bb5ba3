//! Fully connected layers with manual reverse-mode differentiation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// `y = act(W x + b)` with `W` stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl TryFrom<LayerRepr> for Layer {
    type Error = Error;

    fn try_from(r: LayerRepr) -> Result<Self> {
        check_dim(r.in_dim * r.out_dim, r.weights.len())?;
        check_dim(r.out_dim, r.bias.len())?;
        if r.weights.iter().chain(&r.bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Layer { in_dim: r.in_dim, out_dim: r.out_dim, activation: r.activation, weights: r.weights, bias: r.bias })
    }
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        LayerRepr { in_dim: l.in_dim, out_dim: l.out_dim, activation: l.activation, weights: l.weights, bias: l.bias }
    }
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Layer { in_dim, out_dim, activation, weights, bias: vec![0.0; out_dim] }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                let pre = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                match self.activation {
                    Activation::Tanh => pre.tanh(),
                    Activation::Identity => pre,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpRepr {
    layers: Vec<Layer>,
}

impl TryFrom<MlpRepr> for MlpParams {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        MlpParams::new(r.layers)
    }
}

impl From<MlpParams> for MlpRepr {
    fn from(m: MlpParams) -> Self {
        MlpRepr { layers: m.layers }
    }
}

/// Activations recorded by a forward pass; `values[0]` is the input and
/// `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }
}

/// Parameter gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer dimensions do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Dense stack `sizes[0] -> ... -> sizes[n]`; tanh on hidden layers and
    /// identity on the output layer.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { Activation::Tanh };
                Layer::init(w[0], w[1], act, rng)
            })
            .collect();
        MlpParams { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Trace> {
        check_dim(self.in_dim(), x.len())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(values.last().unwrap());
            values.push(next);
        }
        Ok(Trace { values })
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the network output).
    /// Returns the parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64]) -> (MlpGrads, Vec<f64>) {
        let n = self.layers.len();
        let mut gw = vec![Vec::new(); n];
        let mut gb = vec![Vec::new(); n];
        let mut upstream = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.values[i];
            let output = &trace.values[i + 1];
            let dpre: Vec<f64> = match layer.activation {
                Activation::Tanh => upstream.iter().zip(output).map(|(g, y)| g * (1.0 - y * y)).collect(),
                Activation::Identity => upstream,
            };
            let mut w = vec![0.0; layer.weights.len()];
            for (o, d) in dpre.iter().enumerate() {
                for (k, x) in input.iter().enumerate() {
                    w[o * layer.in_dim + k] = d * x;
                }
            }
            let mut dx = vec![0.0; layer.in_dim];
            for (o, d) in dpre.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (k, wv) in row.iter().enumerate() {
                    dx[k] += wv * d;
                }
            }
            gw[i] = w;
            gb[i] = dpre;
            upstream = dx;
        }
        (MlpGrads { weights: gw, bias: gb }, upstream)
    }

    /// Parameters as one vector: each layer's weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    /// Inverse of [`MlpParams::flatten`]; returns the number of values consumed.
    pub fn assign(&mut self, values: &[f64]) -> usize {
        let mut at = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        at
    }
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        MlpGrads {
            weights: p.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: p.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::synth::rng_from_seed;

    #[test]
    fn dims_must_chain() {
        let mut rng = rng_from_seed(0);
        let a = Layer::init(3, 4, Activation::Tanh, &mut rng);
        let b = Layer::init(5, 2, Activation::Identity, &mut rng);
        assert!(MlpParams::new(vec![a, b]).is_err());
        assert!(MlpParams::new(vec![]).is_err());
    }

    #[test]
    fn init_shapes_and_range() {
        let mut rng = rng_from_seed(1);
        let m = MlpParams::init(&[6, 8, 4], &mut rng);
        assert_eq!(m.layers[0].activation, Activation::Tanh);
        assert_eq!(m.layers[1].activation, Activation::Identity);
        assert_eq!(m.param_count(), 6 * 8 + 8 + 8 * 4 + 4);
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(m.layers[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn flatten_assign_round_trip() {
        let mut rng = rng_from_seed(2);
        let m = MlpParams::init(&[3, 5, 2], &mut rng);
        let flat = m.flatten();
        let mut other = MlpParams::init(&[3, 5, 2], &mut rng);
        assert_eq!(other.assign(&flat), flat.len());
        assert_eq!(other, m);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let m = MlpParams::init(&[4, 6, 3], &mut rng);
        let x = [0.3, -0.7, 0.2, 1.1];
        let probe = [0.5, -1.0, 2.0];
        let f = |p: &MlpParams, x: &[f64]| -> f64 {
            p.forward(x).unwrap().output().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let trace = m.forward(&x).unwrap();
        let (g, dx) = m.backward(&trace, &probe);
        let flat = m.flatten();
        let gflat = g.flatten();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut p = m.clone();
            let mut v = flat.clone();
            v[i] += h;
            p.assign(&v);
            let up = f(&p, &x);
            v[i] -= 2.0 * h;
            p.assign(&v);
            let down = f(&p, &x);
            assert!(((up - down) / (2.0 * h) - gflat[i]).abs() < 1e-7);
        }
        for k in 0..4 {
            let mut xp = x;
            xp[k] += h;
            let mut xm = x;
            xm[k] -= h;
            assert!(((f(&m, &xp) - f(&m, &xm)) / (2.0 * h) - dx[k]).abs() < 1e-7);
        }
    }
}
