use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::TaskModel;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// `sum_i w_i * mu_i`.
    #[default]
    WeightedMean,
    /// `(1 / count) * sum_i w_i * mu_i`.
    Literal,
}

/// Weighted combination of same-task models. Weights must lie on the
/// probability simplex.
pub fn aggregate(models: &[&TaskModel], weights: &[f64], mode: AggregationMode) -> Result<TaskModel> {
    let first = models.first().ok_or_else(|| Error::invalid("models", "nothing to aggregate"))?;
    if weights.len() != models.len() {
        return Err(Error::DimensionMismatch { expected: models.len(), got: weights.len() });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotSimplex { sum });
    }
    let dim = first.params.len();
    for m in models {
        if m.task_id != first.task_id {
            return Err(Error::TaskMismatch { expected: first.task_id, got: m.task_id });
        }
        if m.params.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: m.params.len() });
        }
    }
    let scale = match mode {
        AggregationMode::WeightedMean => 1.0,
        AggregationMode::Literal => 1.0 / models.len() as f64,
    };
    let mut params = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        let w = w * scale;
        for (p, &x) in params.iter_mut().zip(&m.params) {
            *p += w * x;
        }
    }
    Ok(TaskModel {
        task_id: first.task_id,
        params,
        local_iterations_done: models.iter().map(|m| m.local_iterations_done).sum(),
        staleness: models.iter().map(|m| m.staleness).min().unwrap_or(0),
        samples: models.iter().map(|m| m.samples).sum(),
    })
}

/// Users' models at a UAV.
pub fn edge_aggregate(models: &[&TaskModel], weights: &[f64], mode: AggregationMode) -> Result<TaskModel> {
    aggregate(models, weights, mode)
}

/// UAVs' edge models at a satellite.
pub fn cloud_aggregate(edge_models: &[&TaskModel], weights: &[f64], mode: AggregationMode) -> Result<TaskModel> {
    aggregate(edge_models, weights, mode)
}

/// Direct edge models plus cloud models relayed over inter-satellite links,
/// combined at the final satellite. `weights` covers the direct models first.
pub fn final_aggregate(
    direct_edge_models: &[&TaskModel],
    relayed_cloud_models: &[&TaskModel],
    weights: &[f64],
    mode: AggregationMode,
) -> Result<TaskModel> {
    let all: Vec<&TaskModel> = direct_edge_models.iter().chain(relayed_cloud_models).copied().collect();
    aggregate(&all, weights, mode)
}
