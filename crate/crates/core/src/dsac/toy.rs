//! One-step problems with known optima, used to smoke-test learners.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Agent, ReplayBuffer, Transition};
use crate::error::Result;

/// `r(a) = -(a - target)^2` on a single constant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBandit {
    pub target: f64,
}

impl QuadraticBandit {
    pub const STATE: [f64; 1] = [1.0];

    pub fn reward(&self, a: f64) -> f64 {
        -(a - self.target) * (a - self.target)
    }
}

/// Trains with one environment step and one update per iteration; returns
/// the deterministic action after every `report_every` steps.
pub fn train_quadratic_bandit(
    agent: &mut Agent,
    bandit: QuadraticBandit,
    steps: usize,
    batch: usize,
    report_every: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(10_000);
    let s = QuadraticBandit::STATE.to_vec();
    let mut trace = Vec::new();
    for step in 1..=steps {
        let a = agent.sample_action(&s, true)?;
        let r = bandit.reward(a[0]);
        buffer.push(Transition { s: s.clone(), a, a_discrete: Vec::new(), r, s_next: s.clone(), done: true })?;
        if buffer.len() >= batch {
            let b = buffer.sample(batch, &mut rng);
            agent.update(&b)?;
        }
        if report_every > 0 && step % report_every == 0 {
            trace.push((step, agent.sample_action(&s, false)?[0]));
        }
    }
    Ok(trace)
}
