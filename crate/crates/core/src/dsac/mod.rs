//! Distributional soft actor-critic with a tanh-squashed Gaussian policy and
//! a critic that predicts the mean and spread of the soft return.

mod buffer;
mod gaussian;
pub mod toy;

pub use buffer::{ReplayBuffer, SharedReplayBuffer, Transition};
pub use gaussian::{
    analytic_loglik_grads, clamp_std, clip_target, expected_soft_target, gaussian_kl, gaussian_log_density,
    log_one_minus_tanh_sq, loglik_grads, sigmoid, soft_return_target, softplus, softplus_inverse,
    squashed_log_prob, GaussianReturn,
};

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio::{expect_header, read_f64, read_f64s, read_len, read_u64, write_f64, write_f64s, write_header, write_u64};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, Activation, Adam, DenseNet};

const MAGIC: &[u8; 4] = b"SGAG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsacConfig {
    pub hidden: Vec<usize>,
    pub discount: f64,
    pub tau: f64,
    /// Half-width of the band the std-update target is clipped into.
    pub clip: f64,
    pub rho_min: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub init_temperature: f64,
    pub learn_temperature: bool,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub grad_clip: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Regress onto the whole target Gaussian instead of one draw from it.
    pub analytic_kl: bool,
}

impl Default for DsacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            discount: 0.99,
            tau: 0.005,
            clip: 10.0,
            rho_min: 1.0,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            init_temperature: 0.2,
            learn_temperature: true,
            target_entropy: None,
            grad_clip: 10.0,
            log_std_min: -5.0,
            log_std_max: 2.0,
            analytic_kl: false,
        }
    }
}

impl DsacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, why: &str| Err(Error::invalid(name, why.to_string()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount", "must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip", "must be positive");
        }
        if !(self.rho_min > 0.0) {
            return bad("rho_min", "must be positive");
        }
        if !(self.init_temperature > 0.0) {
            return bad("init_temperature", "must be positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min", "must be below log_std_max");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature: f64,
    pub mean_q: f64,
    pub mean_std: f64,
    pub entropy: f64,
}

/// Actor output at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// `d log_std / d raw`, zero where the bound is active.
    slope: Vec<f64>,
}

impl PolicyHead {
    /// Pre-squash sample for the given standard-normal noise.
    pub fn presquash(&self, noise: &[f64]) -> Vec<f64> {
        self.mean.iter().zip(&self.log_std).zip(noise).map(|((m, ls), e)| m + ls.exp() * e).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: DsacConfig,
    obs_dim: usize,
    act_dim: usize,
    actor: DenseNet,
    actor_target: DenseNet,
    critic: DenseNet,
    critic_target: DenseNet,
    log_nu: f64,
    actor_opt: Adam,
    critic_opt: Adam,
    nu_opt: Adam,
    rng: ChaCha8Rng,
    steps: u64,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(hidden);
    s.push(output);
    s
}

impl Agent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: DsacConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if act_dim == 0 {
            return Err(Error::invalid("act_dim", "continuous action part must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor = DenseNet::new(&sizes(obs_dim, &cfg.hidden, 2 * act_dim), Activation::Tanh, Activation::Identity, &mut rng);
        actor.scale_output_layer(0.01);
        let mut critic = DenseNet::new(&sizes(obs_dim + act_dim, &cfg.hidden, 2), Activation::Tanh, Activation::Identity, &mut rng);
        critic.scale_output_layer(0.1);
        let n = critic.num_params();
        critic.params_mut()[n - 1] = softplus_inverse(cfg.rho_min + 1.0);
        Ok(Self {
            obs_dim,
            act_dim,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(actor.num_params(), cfg.actor_lr),
            critic_opt: Adam::new(critic.num_params(), cfg.critic_lr),
            nu_opt: Adam::new(1, cfg.temperature_lr),
            log_nu: cfg.init_temperature.ln(),
            actor,
            critic,
            cfg,
            rng,
            steps: 0,
        })
    }

    pub fn config(&self) -> &DsacConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn temperature(&self) -> f64 {
        self.log_nu.exp()
    }

    pub fn set_temperature(&mut self, nu: f64) {
        self.log_nu = nu.ln();
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn actor_target(&self) -> &DenseNet {
        &self.actor_target
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn critic_target(&self) -> &DenseNet {
        &self.critic_target
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn head_of(&self, net: &DenseNet, out: &[f64]) -> PolicyHead {
        debug_assert_eq!(net.output_dim(), 2 * self.act_dim);
        let d = self.act_dim;
        let (lo, hi) = (self.cfg.log_std_min, self.cfg.log_std_max);
        let raw = &out[d..];
        PolicyHead {
            mean: out[..d].to_vec(),
            log_std: raw.iter().map(|&r| r.clamp(lo, hi)).collect(),
            slope: raw.iter().map(|&r| if r > lo && r < hi { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn policy(&self, s: &[f64]) -> Result<PolicyHead> {
        Ok(self.head_of(&self.actor, &self.actor.forward(s)?))
    }

    pub fn target_policy(&self, s: &[f64]) -> Result<PolicyHead> {
        Ok(self.head_of(&self.actor_target, &self.actor_target.forward(s)?))
    }

    fn noise(&mut self) -> Vec<f64> {
        (0..self.act_dim).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Returns the pre-squash vector and the squashed action. Without
    /// exploration the policy mean is used.
    pub fn act(&mut self, s: &[f64], explore: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let head = self.policy(s)?;
        let u = if explore {
            let eps = self.noise();
            head.presquash(&eps)
        } else {
            head.mean.clone()
        };
        let a = u.iter().map(|x| x.tanh()).collect();
        Ok((u, a))
    }

    pub fn sample_action(&mut self, s: &[f64], explore: bool) -> Result<Vec<f64>> {
        Ok(self.act(s, explore)?.1)
    }

    /// Log-density of a squashed action under the online policy.
    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let head = self.policy(s)?;
        let u: Vec<f64> = a.iter().map(|&x| x.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()).collect();
        Ok(squashed_log_prob(&u, &head.mean, &head.log_std))
    }

    fn critic_input(s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.len() + a.len());
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x
    }

    pub fn q(&self, s: &[f64], a: &[f64]) -> Result<GaussianReturn> {
        let out = self.critic.forward(&Self::critic_input(s, a))?;
        Ok(GaussianReturn::from_raw(out[0], out[1], self.cfg.rho_min))
    }

    pub fn q_target(&self, s: &[f64], a: &[f64]) -> Result<GaussianReturn> {
        let out = self.critic_target.forward(&Self::critic_input(s, a))?;
        Ok(GaussianReturn::from_raw(out[0], out[1], self.cfg.rho_min))
    }

    /// Target-policy draw at `s_next`: squashed action and its log-density.
    fn next_action(&mut self, s_next: &[f64]) -> Result<(Vec<f64>, f64)> {
        let head = self.target_policy(s_next)?;
        let eps = self.noise();
        let u = head.presquash(&eps);
        let logp = squashed_log_prob(&u, &head.mean, &head.log_std);
        Ok((u.iter().map(|x| x.tanh()).collect(), logp))
    }

    /// Critic gradient for one batch (mean negative log-likelihood) and the
    /// loss value. The mean head sees the raw sampled target; the spread head
    /// sees it clipped around the current estimate.
    pub fn critic_grads(&mut self, batch: &[&Transition]) -> Result<(Vec<f64>, f64, f64, f64)> {
        let mut grad = vec![0.0; self.critic.num_params()];
        let nu = self.temperature();
        let b = batch.len() as f64;
        let (mut loss, mut mean_q, mut mean_std) = (0.0, 0.0, 0.0);
        for t in batch {
            let tape = self.critic.forward_tape(&Self::critic_input(&t.s, &t.a))?;
            let (q, raw) = (tape.output()[0], tape.output()[1]);
            let rho = clamp_std(softplus(raw), self.cfg.rho_min);
            let (gq, grho, y) = if t.done {
                let y = t.r;
                let (gq, _) = loglik_grads(y, q, rho);
                let (_, grho) = loglik_grads(clip_target(y, q, self.cfg.clip), q, rho);
                (gq, grho, y)
            } else {
                let (a_next, logp) = self.next_action(&t.s_next)?;
                let next = self.q_target(&t.s_next, &a_next)?;
                if self.cfg.analytic_kl {
                    let y = expected_soft_target(t.r, false, self.cfg.discount, next.q_mean, logp, nu);
                    let s = self.cfg.discount * next.q_std;
                    let (gq, _) = analytic_loglik_grads(y, s, q, rho);
                    let (_, grho) = analytic_loglik_grads(clip_target(y, q, self.cfg.clip), s, q, rho);
                    (gq, grho, y)
                } else {
                    let y = soft_return_target(t.r, false, self.cfg.discount, next, logp, nu, &mut self.rng);
                    let (gq, _) = loglik_grads(y, q, rho);
                    let (_, grho) = loglik_grads(clip_target(y, q, self.cfg.clip), q, rho);
                    (gq, grho, y)
                }
            };
            loss -= gaussian_log_density(y, q, rho) / b;
            mean_q += q / b;
            mean_std += rho / b;
            let slope = GaussianReturn::std_slope(raw, self.cfg.rho_min);
            self.critic.backward(&tape, &[-gq / b, -grho * slope / b], &mut grad)?;
        }
        Ok((grad, loss, mean_q, mean_std))
    }

    /// Gradient of `mean(nu * log pi(a|s) - Q(s, a))` over `states`, where
    /// `a` is the squashed sample built from the supplied noise. Returns the
    /// gradient, the objective and the per-state log-densities.
    pub fn actor_grads_with_noise(&self, states: &[&[f64]], noise: &[Vec<f64>]) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        if states.len() != noise.len() {
            return Err(Error::DimensionMismatch { expected: states.len(), got: noise.len() });
        }
        let d = self.act_dim;
        let nu = self.temperature();
        let b = states.len() as f64;
        let mut grad = vec![0.0; self.actor.num_params()];
        let mut scratch = vec![0.0; self.critic.num_params()];
        let mut objective = 0.0;
        let mut log_probs = Vec::with_capacity(states.len());
        for (s, eps) in states.iter().zip(noise) {
            let tape = self.actor.forward_tape(s)?;
            let head = self.head_of(&self.actor, tape.output());
            let u = head.presquash(eps);
            let a: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
            let logp = squashed_log_prob(&u, &head.mean, &head.log_std);
            let ctape = self.critic.forward_tape(&Self::critic_input(s, &a))?;
            let q = ctape.output()[0];
            let dq_dx = self.critic.backward(&ctape, &[1.0, 0.0], &mut scratch)?;
            let mut g_out = vec![0.0; 2 * d];
            for j in 0..d {
                let sigma = head.log_std[j].exp();
                let dq_du = dq_dx[self.obs_dim + j] * (1.0 - a[j] * a[j]);
                g_out[j] = (nu * 2.0 * a[j] - dq_du) / b;
                g_out[d + j] = (nu * (-1.0 + 2.0 * a[j] * sigma * eps[j]) - dq_du * sigma * eps[j]) * head.slope[j] / b;
            }
            self.actor.backward(&tape, &g_out, &mut grad)?;
            objective += (nu * logp - q) / b;
            log_probs.push(logp);
        }
        Ok((grad, objective, log_probs))
    }

    pub fn actor_objective(&self, states: &[&[f64]], noise: &[Vec<f64>]) -> Result<f64> {
        let nu = self.temperature();
        let mut total = 0.0;
        for (s, eps) in states.iter().zip(noise) {
            let head = self.policy(s)?;
            let u = head.presquash(eps);
            let a: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
            total += nu * squashed_log_prob(&u, &head.mean, &head.log_std) - self.q(s, &a)?.q_mean;
        }
        Ok(total / states.len() as f64)
    }

    /// Gradient of `-nu * (log pi + target_entropy)` taken with respect to
    /// `nu` and applied to `log nu`.
    pub fn temperature_grad(&self, log_probs: &[f64]) -> f64 {
        let h = self.target_entropy();
        -log_probs.iter().map(|lp| lp + h).sum::<f64>() / log_probs.len().max(1) as f64
    }

    pub fn apply_critic_grads(&mut self, mut grad: Vec<f64>) {
        clip_global_norm(&mut grad, self.cfg.grad_clip);
        self.critic_opt.step_net(&mut self.critic, &grad);
    }

    pub fn apply_actor_grads(&mut self, mut grad: Vec<f64>) {
        clip_global_norm(&mut grad, self.cfg.grad_clip);
        self.actor_opt.step_net(&mut self.actor, &grad);
    }

    pub fn apply_temperature_grad(&mut self, g: f64) {
        if self.cfg.learn_temperature && g.is_finite() {
            let mut p = [self.log_nu];
            self.nu_opt.step(&mut p, &[g]);
            self.log_nu = p[0].clamp(-20.0, 5.0);
        }
    }

    /// `target <- tau * online + (1 - tau) * target` for both target nets.
    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid("tau", format!("must lie in (0, 1], got {tau}")));
        }
        let online = self.critic.params().to_vec();
        polyak_update(self.critic_target.params_mut(), &online, tau);
        let online = self.actor.params().to_vec();
        polyak_update(self.actor_target.params_mut(), &online, tau);
        Ok(())
    }

    /// One learner step: critic, actor, temperature, then target nets.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must be non-empty"));
        }
        let (cg, critic_loss, mean_q, mean_std) = self.critic_grads(batch)?;
        self.apply_critic_grads(cg);
        let noise: Vec<Vec<f64>> = (0..batch.len()).map(|_| self.noise()).collect();
        let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let (ag, actor_loss, log_probs) = self.actor_grads_with_noise(&states, &noise)?;
        self.apply_actor_grads(ag);
        let tg = self.temperature_grad(&log_probs);
        self.apply_temperature_grad(tg);
        self.soft_update_targets(self.cfg.tau)?;
        self.steps += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            temperature: self.temperature(),
            mean_q,
            mean_std,
            entropy: -log_probs.iter().sum::<f64>() / log_probs.len() as f64,
        })
    }

    /// Nets, temperature and step counter. Optimizer moments are not kept.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, MAGIC, VERSION)?;
        write_u64(&mut w, self.obs_dim as u64)?;
        write_u64(&mut w, self.act_dim as u64)?;
        write_u64(&mut w, self.steps)?;
        write_f64(&mut w, self.log_nu)?;
        for net in [&self.actor, &self.actor_target, &self.critic, &self.critic_target] {
            write_u64(&mut w, net.sizes().len() as u64)?;
            for &s in net.sizes() {
                write_u64(&mut w, s as u64)?;
            }
            write_f64s(&mut w, net.params())?;
        }
        Ok(())
    }

    /// Loads a checkpoint into an agent built with matching shapes.
    pub fn read_checkpoint<R: Read>(&mut self, mut r: R) -> Result<()> {
        expect_header(&mut r, MAGIC, VERSION, "agent checkpoint")?;
        let obs = read_len(&mut r)?;
        let act = read_len(&mut r)?;
        if obs != self.obs_dim || act != self.act_dim {
            return Err(Error::Format(format!(
                "checkpoint is for obs {obs} / act {act}, agent has {} / {}",
                self.obs_dim, self.act_dim
            )));
        }
        let steps = read_u64(&mut r)?;
        let log_nu = read_f64(&mut r)?;
        let mut loaded = Vec::with_capacity(4);
        for net in [&self.actor, &self.actor_target, &self.critic, &self.critic_target] {
            let n = read_len(&mut r)?;
            let sizes: Vec<usize> = (0..n).map(|_| read_len(&mut r)).collect::<Result<_>>()?;
            if sizes != net.sizes() {
                return Err(Error::Format(format!("layer sizes {sizes:?} do not match {:?}", net.sizes())));
            }
            loaded.push(read_f64s(&mut r)?);
        }
        self.actor.set_params(&loaded[0])?;
        self.actor_target.set_params(&loaded[1])?;
        self.critic.set_params(&loaded[2])?;
        self.critic_target.set_params(&loaded[3])?;
        self.steps = steps;
        self.log_nu = log_nu;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
