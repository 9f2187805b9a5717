//! Small fully connected networks with hand-written backpropagation.
//!
//! Hidden layers use `tanh`, the output layer is linear. Weights are stored
//! row-major as `out x in`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpCheckpoint")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct MlpCheckpoint {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(c: MlpCheckpoint) -> Result<Self> {
        Mlp::from_parts(&c.layer_sizes, c.weights, c.biases)
    }
}

/// One gradient tensor per parameter tensor of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `layers[0]` is the input, `layers[l]` the output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("activations always hold the input")
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::InvalidParams(format!(
            "layer sizes {layer_sizes:?} need at least two positive entries"
        )));
    }
    Ok(())
}

/// Dot product with four independent accumulators so the adds pipeline.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Mlp {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
            );
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect());
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Builds a network from explicit row-major weights and biases.
    pub fn from_parts(layer_sizes: &[usize], weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let net = Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.layer_sizes.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::ShapeMismatch("layer count does not match layer sizes".into()));
        }
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] || self.biases[l].len() != w[1] {
                return Err(Error::ShapeMismatch(format!("layer {l} is not {}x{}", w[1], w[0])));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::DimensionMismatch {
                expected: self.input_size(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's output.
    pub fn forward_cached(&self, input: &[f64]) -> Result<Activations> {
        self.check_input(input)?;
        let last = self.num_layers() - 1;
        let mut layers = Vec::with_capacity(self.num_layers() + 1);
        layers.push(input.to_vec());
        for l in 0..self.num_layers() {
            let x = &layers[l];
            let n_in = self.layer_sizes[l];
            let out: Vec<f64> = self.biases[l]
                .iter()
                .enumerate()
                .map(|(o, b)| {
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    let z = b + dot(row, x);
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            layers.push(out);
        }
        Ok(Activations { layers })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.layers.pop().unwrap())
    }

    /// Gradient of `output · output_grad` with respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        let acts = self.forward_cached(input)?;
        self.accumulate_backward(&acts, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient of `output · output_grad` into `grads`, reusing a
    /// cached forward pass.
    pub fn accumulate_backward(&self, acts: &Activations, output_grad: &[f64], grads: &mut GradientSet) -> Result<()> {
        if output_grad.len() != self.output_size() {
            return Err(Error::DimensionMismatch {
                expected: self.output_size(),
                got: output_grad.len(),
            });
        }
        let mut delta = output_grad.to_vec();
        for l in (0..self.num_layers()).rev() {
            let x = &acts.layers[l];
            let n_in = self.layer_sizes[l];
            let gw = &mut grads.weights[l];
            for (o, d) in delta.iter().enumerate() {
                grads.biases[l][o] += d;
                if *d != 0.0 {
                    for (g, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *g += d * v;
                    }
                }
            }
            if l > 0 {
                // propagate through W and the tanh of the previous layer
                let mut prev = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        for (p, w) in prev.iter_mut().zip(&self.weights[l][o * n_in..(o + 1) * n_in]) {
                            *p += d * w;
                        }
                    }
                }
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientSet {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|g| *g *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    fn congruent(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: GradientSet,
    second: GradientSet,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: GradientSet::zeros_like(net),
            second: GradientSet::zeros_like(net),
        }
    }

    /// Applies one bias-corrected Adam update to `net`. Fails without touching
    /// anything if a gradient entry is not finite.
    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidParams(format!("learning rate {lr} must be positive")));
        }
        if !grads.congruent(net) || !self.first.congruent(net) {
            return Err(Error::ShapeMismatch("gradient set does not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grads.values())
            .zip(self.first.values_mut())
            .zip(self.second.values_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        if !net.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        Ok(())
    }
}

/// Adam on a single scalar parameter, used for the SAC log-temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub step: u64,
    first: f64,
    second: f64,
}

impl Default for ScalarAdam {
    fn default() -> Self {
        ScalarAdam {
            step: 0,
            first: 0.0,
            second: 0.0,
        }
    }
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, lr: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.step += 1;
        let t = self.step as i32;
        self.first = b1 * self.first + (1.0 - b1) * grad;
        self.second = b2 * self.second + (1.0 - b2) * grad * grad;
        let m_hat = self.first / (1.0 - b1.powi(t));
        let v_hat = self.second / (1.0 - b2.powi(t));
        *param -= lr * m_hat / (v_hat.sqrt() + eps);
        Ok(())
    }
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * online`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs online {:?}",
            target.layer_sizes, online.layer_sizes
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParams(format!("tau {tau} outside (0, 1]")));
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}
