use serde::{Deserialize, Serialize};

use crate::error::Validator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// `alpha = beta^t`.
    pub beta: f64,
    pub eps_c1: f64,
    pub eps_c2: f64,
    pub eps_f: f64,
    /// Lower clamp applied to every task performance before scoring.
    pub gamma_floor: f64,
    /// Keep `alpha = 1` for the whole episode.
    pub freeze_alpha: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { beta: 0.995, eps_c1: 200.0, eps_c2: 100.0, eps_f: 0.01, gamma_floor: 0.01, freeze_alpha: false }
    }
}

impl RewardParams {
    pub(crate) fn validate(&self, v: &mut Validator) {
        v.check(self.beta > 0.0 && self.beta < 1.0, "reward.beta", format!("must lie in (0, 1), got {}", self.beta));
        v.positive(self.eps_c1, "reward.eps_c1");
        v.positive(self.eps_c2, "reward.eps_c2");
        v.positive(self.eps_f, "reward.eps_f");
        v.positive(self.gamma_floor, "reward.gamma_floor");
    }

    pub fn alpha(&self, t: usize) -> f64 {
        if self.freeze_alpha {
            1.0
        } else {
            self.beta.powi(t as i32)
        }
    }
}

/// Time-decaying mix of raw task performance and a penalty on each task's
/// distance from the cross-task mean.
pub fn reward(accuracies: &[f64], t: usize, params: &RewardParams) -> f64 {
    reward_with_alpha(accuracies, params.alpha(t), params)
}

pub fn reward_with_alpha(accuracies: &[f64], alpha: f64, params: &RewardParams) -> f64 {
    if accuracies.is_empty() {
        return 0.0;
    }
    let f = accuracies.len() as f64;
    let gamma: Vec<f64> = accuracies
        .iter()
        .map(|&g| if g.is_finite() { g.max(params.gamma_floor) } else { params.gamma_floor })
        .collect();
    let mean = gamma.iter().sum::<f64>() / f;
    let mut raw = 0.0;
    let mut fair = 0.0;
    for &g in &gamma {
        raw += (g / params.eps_c1) / params.eps_f;
        fair += (g / params.eps_c2) / (params.eps_f + (mean / g - 1.0).abs());
    }
    alpha / f * raw + (1.0 - alpha) / f * fair
}
