//! Small hybrid-action problems with known optima.

use super::HybridEnv;
use crate::error::{Error, Result};

/// One-step bandit: pick an arm and a squashed scalar; each arm has its own
/// quadratic reward in the scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBandit {
    /// Per arm `(peak, curvature, centre)`: `r = peak - curvature * (a - centre)^2`.
    pub arms: Vec<(f64, f64, f64)>,
}

impl Default for HybridBandit {
    fn default() -> Self {
        Self { arms: vec![(0.0, 1.0, 0.3), (0.5, 2.0, -0.4)] }
    }
}

impl HybridBandit {
    pub const STATE: [f64; 1] = [1.0];

    pub fn reward(&self, arm: usize, a: f64) -> f64 {
        let (peak, curv, centre) = self.arms[arm];
        peak - curv * (a - centre) * (a - centre)
    }
}

impl HybridEnv for HybridBandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn discrete_options(&self) -> Vec<usize> {
        vec![self.arms.len()]
    }

    fn continuous_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        Ok(Self::STATE.to_vec())
    }

    fn step(&mut self, discrete: &[usize], continuous: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let arm = *discrete.first().ok_or_else(|| Error::invalid("discrete", "missing arm"))?;
        if arm >= self.arms.len() || continuous.len() != 1 {
            return Err(Error::invalid("action", "arm out of range or wrong continuous length"));
        }
        Ok((Self::STATE.to_vec(), self.reward(arm, continuous[0].tanh()), true))
    }
}

/// Short episodes whose discrete part has a single option per slot, so only
/// the continuous part matters. The state is the elapsed fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTask {
    pub slots: usize,
    pub horizon: usize,
    pub target: f64,
    t: usize,
}

impl TrackingTask {
    pub fn new(slots: usize, horizon: usize, target: f64) -> Self {
        Self { slots, horizon, target, t: 0 }
    }

    fn state(&self) -> Vec<f64> {
        vec![self.t as f64 / self.horizon as f64]
    }
}

impl HybridEnv for TrackingTask {
    fn obs_dim(&self) -> usize {
        1
    }

    fn discrete_options(&self) -> Vec<usize> {
        vec![1; self.slots]
    }

    fn continuous_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        self.t = 0;
        Ok(self.state())
    }

    fn step(&mut self, discrete: &[usize], continuous: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        if discrete.len() != self.slots || discrete.iter().any(|&d| d != 0) {
            return Err(Error::invalid("discrete", "every slot has exactly one option"));
        }
        let a = continuous[0].tanh();
        let r = -(a - self.target) * (a - self.target);
        self.t += 1;
        Ok((self.state(), r, self.t >= self.horizon))
    }
}
