use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::discrete::{categorical_kl, slot_probs};
use crate::dsac::{gaussian_kl, squashed_log_prob};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};

/// Trust-region thresholds for one recoupling step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlBudget {
    /// Bound on the sum of both parts.
    pub total: f64,
    /// Bound on the per-state discrete KL, summed over slots.
    pub discrete: f64,
    /// Bound on the per-dimension continuous KL.
    pub continuous: f64,
}

impl Default for KlBudget {
    fn default() -> Self {
        Self { total: 0.1, discrete: 0.01, continuous: 0.001 }
    }
}

impl KlBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.total > 0.0 && self.discrete > 0.0 && self.continuous > 0.0) {
            return Err(Error::invalid("budget", "all thresholds must be positive"));
        }
        Ok(())
    }

    pub fn admits(&self, kl_d: f64, kl_c: f64) -> bool {
        kl_d <= self.discrete && kl_c <= self.continuous && kl_d + kl_c <= self.total
    }
}

/// A factored hybrid policy evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredHead {
    pub probs: Vec<Vec<f64>>,
    /// Pre-squash Gaussian.
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl FactoredHead {
    /// Joint log-density of a discrete choice and a squashed continuous
    /// action given by its pre-squash value.
    pub fn log_prob(&self, discrete: &[usize], presquash: &[f64]) -> f64 {
        let d: f64 = self.probs.iter().zip(discrete).map(|(p, &k)| p[k].ln()).sum();
        d + squashed_log_prob(presquash, &self.mean, &self.log_std)
    }

    /// `(sum over slots of categorical KL, mean over dims of Gaussian KL)`
    /// from `self` to `other`.
    pub fn kl_parts(&self, other: &FactoredHead) -> (f64, f64) {
        let kd = self.probs.iter().zip(&other.probs).map(|(p, q)| categorical_kl(p, q)).sum();
        let n = self.mean.len();
        let kc = if n == 0 {
            0.0
        } else {
            (0..n)
                .map(|j| gaussian_kl(self.mean[j], self.log_std[j].exp(), other.mean[j], other.log_std[j].exp()))
                .sum::<f64>()
                / n as f64
        };
        (kd, kc)
    }
}

/// The single joint policy fitted to the product of the two sub-policies.
#[derive(Debug, Clone)]
pub struct CoupledPolicy {
    net: DenseNet,
    options: Vec<usize>,
    cont_dim: usize,
    log_std_min: f64,
    log_std_max: f64,
}

/// Result of one recoupling attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoupleOutcome {
    pub accepted: bool,
    pub objective_before: f64,
    pub objective_after: f64,
    pub kl_discrete: f64,
    pub kl_continuous: f64,
    pub backtracks: usize,
}

impl CoupledPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        options: Vec<usize>,
        cont_dim: usize,
        hidden: &[usize],
        log_std_bounds: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let total: usize = options.iter().sum();
        let mut sizes = vec![obs_dim];
        sizes.extend(hidden);
        sizes.push(total + 2 * cont_dim);
        let mut net = DenseNet::new(&sizes, Activation::Tanh, Activation::Identity, rng);
        net.scale_output_layer(0.01);
        Self { net, options, cont_dim, log_std_min: log_std_bounds.0, log_std_max: log_std_bounds.1 }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    fn head_from(&self, out: &[f64]) -> FactoredHead {
        let total: usize = self.options.iter().sum();
        let d = self.cont_dim;
        FactoredHead {
            probs: slot_probs(&out[..total], &self.options),
            mean: out[total..total + d].to_vec(),
            log_std: out[total + d..].iter().map(|v| v.clamp(self.log_std_min, self.log_std_max)).collect(),
        }
    }

    pub fn head(&self, s: &[f64]) -> Result<FactoredHead> {
        Ok(self.head_from(&self.net.forward(s)?))
    }

    /// Sampled or modal action: discrete choice, pre-squash vector.
    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], explore: bool, rng: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
        let h = self.head(s)?;
        let discrete = h
            .probs
            .iter()
            .map(|p| {
                if explore {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    p.iter().position(|&pk| {
                        acc += pk;
                        u < acc
                    })
                    .unwrap_or(p.len() - 1)
                } else {
                    (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b })
                }
            })
            .collect();
        let u = if explore {
            h.mean.iter().zip(&h.log_std).map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            h.mean.clone()
        };
        Ok((discrete, u))
    }

    /// Mean over states of `KL(target || self)`, discrete part summed over
    /// slots and continuous part summed over dims.
    pub fn objective(&self, states: &[&[f64]], targets: &[FactoredHead]) -> Result<f64> {
        Ok(self.objective_of(&self.heads(states)?, targets))
    }

    fn heads(&self, states: &[&[f64]]) -> Result<Vec<FactoredHead>> {
        states.iter().map(|s| self.head(s)).collect()
    }

    fn objective_of(&self, heads: &[FactoredHead], targets: &[FactoredHead]) -> f64 {
        let total: f64 = heads
            .iter()
            .zip(targets)
            .map(|(h, t)| {
                let (kd, kc) = t.kl_parts(h);
                kd + kc * self.cont_dim as f64
            })
            .sum();
        total / heads.len() as f64
    }

    pub fn objective_grads(&self, states: &[&[f64]], targets: &[FactoredHead]) -> Result<Vec<f64>> {
        let total: usize = self.options.iter().sum();
        let d = self.cont_dim;
        let b = states.len() as f64;
        let mut grad = vec![0.0; self.net.num_params()];
        for (s, t) in states.iter().zip(targets) {
            let tape = self.net.forward_tape(s)?;
            let out = tape.output();
            let h = self.head_from(out);
            let mut g = vec![0.0; out.len()];
            let mut off = 0;
            for (q, p) in h.probs.iter().zip(&t.probs) {
                for k in 0..q.len() {
                    g[off + k] = (q[k] - p[k]) / b;
                }
                off += q.len();
            }
            for j in 0..d {
                let s2 = (2.0 * h.log_std[j]).exp();
                let dm = h.mean[j] - t.mean[j];
                let var_t = (2.0 * t.log_std[j]).exp();
                g[total + j] = dm / s2 / b;
                let raw = out[total + d + j];
                if raw > self.log_std_min && raw < self.log_std_max {
                    g[total + d + j] = (1.0 - (var_t + dm * dm) / s2) / b;
                }
            }
            self.net.backward(&tape, &g, &mut grad)?;
        }
        Ok(grad)
    }

    /// One gradient step on the agreement objective, halved until the
    /// measured divergence from the pre-step policy fits `budget` and the
    /// objective does not increase. Rejected steps leave the policy untouched.
    pub fn recouple_step(
        &mut self,
        states: &[&[f64]],
        targets: &[FactoredHead],
        budget: &KlBudget,
        lr: f64,
        max_backtracks: usize,
    ) -> Result<RecoupleOutcome> {
        if states.is_empty() || states.len() != targets.len() {
            return Err(Error::invalid("states", "need one target per state and at least one state"));
        }
        let old_heads = self.heads(states)?;
        let before = self.objective_of(&old_heads, targets);
        let grad = self.objective_grads(states, targets)?;
        let start = self.net.params().to_vec();
        let mut step = lr;
        let mut last = RecoupleOutcome {
            accepted: false,
            objective_before: before,
            objective_after: before,
            kl_discrete: 0.0,
            kl_continuous: 0.0,
            backtracks: 0,
        };
        if grad.iter().all(|g| *g == 0.0) {
            return Ok(last);
        }
        for k in 0..=max_backtracks {
            let trial: Vec<f64> = start.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            self.net.set_params(&trial)?;
            let heads = self.heads(states)?;
            let (mut kd, mut kc) = (0.0, 0.0);
            for (old, new) in old_heads.iter().zip(&heads) {
                let (a, b) = old.kl_parts(new);
                kd += a;
                kc += b;
            }
            kd /= states.len() as f64;
            kc /= states.len() as f64;
            let after = self.objective_of(&heads, targets);
            last = RecoupleOutcome {
                accepted: false,
                objective_before: before,
                objective_after: after,
                kl_discrete: kd,
                kl_continuous: kc,
                backtracks: k,
            };
            if budget.admits(kd, kc) && after <= before {
                last.accepted = true;
                return Ok(last);
            }
            step *= 0.5;
        }
        self.net.set_params(&start)?;
        last.objective_after = before;
        Ok(last)
    }
}
