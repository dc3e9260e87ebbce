//! A small dense-network engine: flat parameter storage, a recorded forward
//! pass, exact reverse-mode gradients and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network. Parameters are stored layer after layer, each
/// layer as its row-major `out x in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
    #[serde(skip)]
    version: u64,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// `layers[l]` is the input to layer `l`; the last entry is the output.
    layers: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "a network needs an input and an output layer");
        Self { sizes: sizes.to_vec(), hidden, output, params: vec![0.0; param_count(sizes)], version: 0 }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    /// Multiplies the last layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let start = self.params.len() - fan_in * fan_out - fan_out;
        for p in &mut self.params[start..start + fan_in * fan_out] {
            *p *= factor;
        }
        self.version += 1;
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: params.len() });
        }
        self.params.copy_from_slice(params);
        self.version += 1;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut offset = 0;
        for l in 0..self.sizes.len() - 1 {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation(l);
            let (w, b) = self.params[offset..offset + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            x = (0..fan_out).map(|o| act.apply(dot(&w[o * fan_in..(o + 1) * fan_in], &x) + b[o])).collect();
            offset += fan_in * fan_out + fan_out;
        }
        Ok(x)
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let depth = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);
        layers.push(input.to_vec());
        let mut offset = 0;
        for l in 0..depth {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation(l);
            let (w, b) = self.params[offset..offset + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            let x = &layers[l];
            let z: Vec<f64> = (0..fan_out).map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], x) + b[o]).collect();
            let y = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            layers.push(y);
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Tape { version: self.version, layers, pre })
    }

    /// Back-propagates `grad_output` through a recorded pass. Parameter
    /// gradients are added into `param_grad`; the input gradient is returned.
    pub fn backward(&self, tape: &Tape, grad_output: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if tape.version != self.version || tape.layers.len() != self.sizes.len() {
            return Err(Error::StaleTape);
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: grad_output.len() });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: param_grad.len() });
        }
        let mut delta = grad_output.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation(l);
            offset -= fan_in * fan_out + fan_out;
            let z = &tape.pre[l];
            let y = &tape.layers[l + 1];
            for o in 0..fan_out {
                delta[o] *= act.derivative(z[o], y[o]);
            }
            let x = &tape.layers[l];
            let (gw, gb) = param_grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * fan_in;
                for i in 0..fan_in {
                    gw[row + i] += d * x[i];
                    next[i] += d * w[row + i];
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Pre-activation of the first layer.
    pub fn first_preactivation(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let (fan_in, fan_out) = (self.sizes[0], self.sizes[1]);
        let (w, b) = self.params[..fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
        Ok((0..fan_out).map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], input) + b[o]).collect())
    }

    /// Column `i` of the first weight matrix, i.e. how input `i` moves the
    /// first pre-activation.
    pub fn input_column(&self, i: usize) -> Vec<f64> {
        let fan_in = self.sizes[0];
        (0..self.sizes[1]).map(|o| self.params[o * fan_in + i]).collect()
    }

    /// Finishes a forward pass from a first-layer pre-activation.
    pub fn forward_from_preactivation(&self, pre: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = pre.iter().map(|&z| self.activation(0).apply(z)).collect();
        let mut offset = self.sizes[0] * self.sizes[1] + self.sizes[1];
        for l in 1..self.sizes.len() - 1 {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation(l);
            let (w, b) = self.params[offset..offset + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            x = (0..fan_out).map(|o| act.apply(dot(&w[o * fan_in..(o + 1) * fan_in], &x) + b[o])).collect();
            offset += fan_in * fan_out + fan_out;
        }
        x
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: input.len() });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam step applied in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    debug_assert_eq!(params.len(), grads.len());
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam configuration bundled with its moment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { config: AdamConfig::with_lr(lr), state: AdamState::new(n) }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        adam_update(params, grads, &mut self.state, &self.config);
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &[f64]) {
        self.step(net.params_mut(), grads);
    }
}

/// Rescales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    } else if !norm.is_finite() {
        grads.iter_mut().for_each(|g| *g = 0.0);
    }
    norm
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}
