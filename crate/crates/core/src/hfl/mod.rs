//! Federated tasks: data, local training, weighted aggregation at the three
//! levels of the hierarchy, and bit-level transfer bookkeeping.

mod aggregate;
mod checkpoint;
mod data;
mod transfer;

pub use aggregate::{aggregate, cloud_aggregate, edge_aggregate, final_aggregate, AggregationMode};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use data::{gen_synthetic_tasks, LocalDataset, SyntheticConfig};
pub use transfer::{advance_transfers, Direction, NodeId, TransferJob};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArch {
    /// Multinomial logistic regression.
    Logistic,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

impl ModelArch {
    fn sizes(self, input_dim: usize, classes: usize) -> Vec<usize> {
        match self {
            ModelArch::Logistic => vec![input_dim, classes],
            ModelArch::Mlp { hidden } => vec![input_dim, hidden, classes],
        }
    }

    pub fn param_count(self, input_dim: usize, classes: usize) -> usize {
        crate::nn::param_count(&self.sizes(input_dim, classes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub input_dim: usize,
    pub class_count: usize,
    pub arch: ModelArch,
    pub l2: f64,
    pub model_dim: usize,
    pub bits_per_parameter: f64,
    /// Bits moved per model transfer.
    pub model_size_bits: f64,
    /// Test accuracy of the nearest-true-mean classifier.
    pub reference_accuracy: f64,
    pub test_features: Vec<f64>,
    pub test_labels: Vec<usize>,
}

impl TaskSpec {
    pub fn network(&self, params: &[f64]) -> Result<DenseNet> {
        let mut net =
            DenseNet::zeros(&self.arch.sizes(self.input_dim, self.class_count), Activation::Tanh, Activation::Identity);
        net.set_params(params)?;
        Ok(net)
    }

    pub fn test_size(&self) -> usize {
        self.test_labels.len()
    }
}

/// One task's parameters as held by a user, UAV or satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub task_id: usize,
    pub params: Vec<f64>,
    pub local_iterations_done: u64,
    /// Global rounds completed since this model last synced.
    pub staleness: u64,
    /// Training samples represented (drives dataset-proportional weights).
    pub samples: f64,
}

impl TaskModel {
    /// Zeros for the convex model. The hidden-layer model starts from a
    /// fixed per-task random point because zero is a saddle for it.
    pub fn initial(spec: &TaskSpec) -> Self {
        let params = match spec.arch {
            ModelArch::Logistic => vec![0.0; spec.model_dim],
            ModelArch::Mlp { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + spec.task_id as u64);
                let sizes = spec.arch.sizes(spec.input_dim, spec.class_count);
                DenseNet::new(&sizes, Activation::Tanh, Activation::Identity, &mut rng).params().to_vec()
            }
        };
        Self { task_id: spec.task_id, params, local_iterations_done: 0, staleness: 0, samples: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// Mean cross-entropy plus `l2/2 * |params|^2`, with its gradient.
pub fn loss_and_grad(spec: &TaskSpec, params: &[f64], features: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let net = spec.network(params)?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset { task: spec.task_id });
    }
    let d = spec.input_dim;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let tape = net.forward_tape(&features[i * d..(i + 1) * d])?;
        let mut p = tape.output().to_vec();
        softmax_in_place(&mut p);
        loss -= p[y].max(1e-300).ln() * inv_n;
        p[y] -= 1.0;
        p.iter_mut().for_each(|g| *g *= inv_n);
        net.backward(&tape, &p, &mut grad)?;
    }
    for (g, &w) in grad.iter_mut().zip(params) {
        *g += spec.l2 * w;
    }
    loss += 0.5 * spec.l2 * params.iter().map(|w| w * w).sum::<f64>();
    Ok((loss, grad))
}

/// One full-batch gradient step on the user's shard.
pub fn local_train_step(model: &TaskModel, data: &LocalDataset, spec: &TaskSpec, lr: f64) -> Result<TaskModel> {
    if model.task_id != data.task_id {
        return Err(Error::TaskMismatch { expected: model.task_id, got: data.task_id });
    }
    if model.task_id != spec.task_id {
        return Err(Error::TaskMismatch { expected: spec.task_id, got: model.task_id });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset { task: data.task_id });
    }
    if model.params.len() != spec.model_dim {
        return Err(Error::DimensionMismatch { expected: spec.model_dim, got: model.params.len() });
    }
    let (_, grad) = loss_and_grad(spec, &model.params, &data.features, &data.labels)?;
    let mut next = model.clone();
    for (p, g) in next.params.iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    if !next.is_finite() {
        return Err(Error::Domain(format!("local step on task {} produced non-finite parameters", model.task_id)));
    }
    next.local_iterations_done += 1;
    next.samples = data.size() as f64;
    Ok(next)
}

/// Held-out accuracy and mean cross-entropy (without the penalty term).
pub fn evaluate_task(model: &TaskModel, spec: &TaskSpec) -> Result<(f64, f64)> {
    if model.task_id != spec.task_id {
        return Err(Error::TaskMismatch { expected: spec.task_id, got: model.task_id });
    }
    let net = spec.network(&model.params)?;
    let d = spec.input_dim;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (i, &y) in spec.test_labels.iter().enumerate() {
        let mut z = net.forward(&spec.test_features[i * d..(i + 1) * d])?;
        let pred = argmax(&z);
        if pred == y {
            correct += 1;
        }
        softmax_in_place(&mut z);
        loss -= z[y].max(1e-300).ln();
    }
    let n = spec.test_size() as f64;
    Ok((correct as f64 / n, loss / n))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
