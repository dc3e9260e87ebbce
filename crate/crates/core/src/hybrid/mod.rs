//! Hybrid discrete/continuous control: a categorical agent and a continuous
//! DSAC agent trained side by side, plus a single joint policy fitted to
//! their product under trust-region limits.

mod coupled;
mod discrete;
pub mod toy;

pub use coupled::{CoupledPolicy, FactoredHead, KlBudget, RecoupleOutcome};
pub use discrete::{categorical_kl, one_hot, slot_probs, DiscreteAgent};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::dsac::{Agent, DsacConfig, ReplayBuffer, Transition};
use crate::env::{Env, RawAction};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, Activation, Adam, DenseNet};

const TAG_DISCRETE: u64 = 1;
const TAG_COUPLED: u64 = 2;
const TAG_VALUE: u64 = 3;
const TAG_LOOP: u64 = 10;
const TAG_EPISODE: u64 = 11;

/// An episodic problem with a hybrid action. The continuous part is passed
/// pre-squash.
pub trait HybridEnv {
    fn obs_dim(&self) -> usize;
    fn discrete_options(&self) -> Vec<usize>;
    fn continuous_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    /// Returns next observation, reward and whether the episode ended.
    fn step(&mut self, discrete: &[usize], continuous: &[f64]) -> Result<(Vec<f64>, f64, bool)>;
    /// Problem-specific numbers reported at the end of an episode.
    fn metrics(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl HybridEnv for Env {
    fn obs_dim(&self) -> usize {
        self.observation_len()
    }

    fn discrete_options(&self) -> Vec<usize> {
        self.layout().discrete_options()
    }

    fn continuous_dim(&self) -> usize {
        self.layout().continuous_len()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        Ok(Env::reset(self, seed)?.to_vec())
    }

    fn step(&mut self, discrete: &[usize], continuous: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let out = self.step_raw(&RawAction { discrete: discrete.to_vec(), continuous: continuous.to_vec() })?;
        Ok((out.observation.to_vec(), out.reward, out.done))
    }

    /// Per-task accuracies followed by per-task losses.
    fn metrics(&self) -> Vec<f64> {
        let mut m = self.accuracies().to_vec();
        m.extend_from_slice(self.losses());
        m
    }
}

/// Something that can pick hybrid actions and learn from replayed batches.
pub trait Learner {
    /// Discrete choice, pre-squash continuous vector and its squashed value.
    fn act(&mut self, s: &[f64], explore: bool) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)>;
    fn learn(&mut self, batch: &[&Transition]) -> Result<()>;
}

impl Learner for Agent {
    fn act(&mut self, s: &[f64], explore: bool) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let (u, a) = Agent::act(self, s, explore)?;
        Ok((Vec::new(), u, a))
    }

    fn learn(&mut self, batch: &[&Transition]) -> Result<()> {
        self.update(batch).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub dsac: DsacConfig,
    /// Entropy target of the categorical agent as a fraction of the uniform
    /// joint entropy.
    pub discrete_entropy_ratio: f64,
    pub budget: KlBudget,
    pub recouple: bool,
    pub recouple_lr: f64,
    pub max_backtracks: usize,
    pub value_lr: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            dsac: DsacConfig::default(),
            discrete_entropy_ratio: 0.5,
            budget: KlBudget::default(),
            recouple: true,
            recouple_lr: 0.1,
            max_backtracks: 12,
            value_lr: 3e-4,
        }
    }
}

/// Plain expected-return critic over the full hybrid action, trained by TD.
#[derive(Debug, Clone)]
pub struct ValueCritic {
    net: DenseNet,
    target: DenseNet,
    opt: Adam,
    options: Vec<usize>,
}

impl ValueCritic {
    pub fn new<R: rand::Rng + ?Sized>(obs_dim: usize, options: Vec<usize>, cont_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim + options.iter().sum::<usize>() + cont_dim];
        sizes.extend(hidden);
        sizes.push(1);
        let mut net = DenseNet::new(&sizes, Activation::Tanh, Activation::Identity, rng);
        net.scale_output_layer(0.1);
        Self { target: net.clone(), opt: Adam::new(net.num_params(), lr), net, options }
    }

    fn input(&self, s: &[f64], d: &[usize], a: &[f64]) -> Vec<f64> {
        let mut x = s.to_vec();
        x.extend(one_hot(d, &self.options));
        x.extend_from_slice(a);
        x
    }

    pub fn value(&self, s: &[f64], d: &[usize], a: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.input(s, d, a))?[0])
    }

    /// One TD step towards `r + discount * target(s', next action)`; returns
    /// the mean squared TD error.
    pub fn update(&mut self, batch: &[&Transition], next: &[(Vec<usize>, Vec<f64>)], discount: f64, tau: f64, clip: f64) -> Result<f64> {
        let mut grad = vec![0.0; self.net.num_params()];
        let b = batch.len() as f64;
        let mut loss = 0.0;
        for (t, (d2, a2)) in batch.iter().zip(next) {
            let y = if t.done { t.r } else { t.r + discount * self.target.forward(&self.input(&t.s_next, d2, a2))?[0] };
            let tape = self.net.forward_tape(&self.input(&t.s, &t.a_discrete, &t.a))?;
            let err = tape.output()[0] - y;
            loss += 0.5 * err * err / b;
            self.net.backward(&tape, &[err / b], &mut grad)?;
        }
        clip_global_norm(&mut grad, clip);
        self.opt.step_net(&mut self.net, &grad);
        let online = self.net.params().to_vec();
        polyak_update(self.target.params_mut(), &online, tau);
        Ok(loss)
    }
}

/// Squared gap `(Q - Q')^2 / 2` between an online and a target critic mean.
pub fn squared_value_gap(q: f64, q_target: f64) -> f64 {
    0.5 * (q - q_target) * (q - q_target)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HybridStats {
    pub continuous_critic_loss: f64,
    pub discrete_critic_loss: f64,
    pub discrete_entropy: f64,
    pub value_loss: f64,
    pub recouple: Option<RecoupleOutcome>,
}

#[derive(Debug, Clone)]
pub struct HybridAgent {
    cfg: HybridConfig,
    continuous: Agent,
    discrete: DiscreteAgent,
    coupled: CoupledPolicy,
    value: ValueCritic,
    rng: ChaCha8Rng,
    coupled_active: bool,
    degenerate: bool,
    last: HybridStats,
}

impl HybridAgent {
    /// The continuous sub-agent is seeded with `seed` itself, so it matches a
    /// stand-alone [`Agent`] built with the same arguments.
    pub fn new(obs_dim: usize, options: Vec<usize>, cont_dim: usize, cfg: HybridConfig, seed: u64) -> Result<Self> {
        cfg.budget.validate()?;
        if cont_dim == 0 {
            return Err(Error::invalid("cont_dim", "continuous action part must be non-empty"));
        }
        let continuous = Agent::new(obs_dim, cont_dim, cfg.dsac.clone(), seed)?;
        let discrete =
            DiscreteAgent::new(obs_dim, options.clone(), cfg.dsac.clone(), cfg.discrete_entropy_ratio, derive_seed(seed, TAG_DISCRETE))?;
        let mut crng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_COUPLED));
        let coupled = CoupledPolicy::new(
            obs_dim,
            options.clone(),
            cont_dim,
            &cfg.dsac.hidden,
            (cfg.dsac.log_std_min, cfg.dsac.log_std_max),
            &mut crng,
        );
        let value = ValueCritic::new(obs_dim, options.clone(), cont_dim, &cfg.dsac.hidden, cfg.value_lr, &mut crng);
        let degenerate = options.iter().all(|&n| n <= 1);
        Ok(Self {
            cfg,
            continuous,
            discrete,
            coupled,
            value,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_VALUE)),
            coupled_active: false,
            degenerate,
            last: HybridStats::default(),
        })
    }

    pub fn config(&self) -> &HybridConfig {
        &self.cfg
    }

    pub fn continuous(&self) -> &Agent {
        &self.continuous
    }

    pub fn continuous_mut(&mut self) -> &mut Agent {
        &mut self.continuous
    }

    pub fn discrete(&self) -> &DiscreteAgent {
        &self.discrete
    }

    pub fn discrete_mut(&mut self) -> &mut DiscreteAgent {
        &mut self.discrete
    }

    pub fn coupled(&self) -> &CoupledPolicy {
        &self.coupled
    }

    pub fn value_critic(&self) -> &ValueCritic {
        &self.value
    }

    /// Whether the joint policy has taken over action selection.
    pub fn coupled_active(&self) -> bool {
        self.coupled_active
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn last_stats(&self) -> HybridStats {
        self.last
    }

    /// Product of the two sub-policies at `s`.
    pub fn product_head(&self, s: &[f64]) -> Result<FactoredHead> {
        let h = self.continuous.policy(s)?;
        Ok(FactoredHead { probs: self.discrete.probs(s)?, mean: h.mean, log_std: h.log_std })
    }

    /// Log-density of a hybrid action under the product policy.
    pub fn factored_log_prob(&self, s: &[f64], discrete: &[usize], presquash: &[f64]) -> Result<f64> {
        Ok(self.product_head(s)?.log_prob(discrete, presquash))
    }

    /// Fits the joint policy to the product policy on `states`.
    pub fn recouple(&mut self, states: &[&[f64]]) -> Result<RecoupleOutcome> {
        let targets: Vec<FactoredHead> = states.iter().map(|s| self.product_head(s)).collect::<Result<_>>()?;
        let out = self.coupled.recouple_step(states, &targets, &self.cfg.budget, self.cfg.recouple_lr, self.cfg.max_backtracks)?;
        if out.accepted {
            self.coupled_active = true;
        }
        Ok(out)
    }

    pub fn update(&mut self, batch: &[&Transition]) -> Result<HybridStats> {
        let c = self.continuous.update(batch)?;
        let (dl, _, de) = self.discrete.update(batch)?;
        let mut next = Vec::with_capacity(batch.len());
        for t in batch {
            let d = self.discrete.act(&t.s_next, false)?;
            let h = self.continuous.policy(&t.s_next)?;
            next.push((d, h.mean.iter().map(|m| m.tanh()).collect::<Vec<f64>>()));
        }
        let d = &self.cfg.dsac;
        let vl = self.value.update(batch, &next, d.discount, d.tau, d.grad_clip)?;
        let recouple = if self.cfg.recouple && !self.degenerate {
            let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
            Some(self.recouple(&states)?)
        } else {
            None
        };
        self.last = HybridStats {
            continuous_critic_loss: c.critic_loss,
            discrete_critic_loss: dl,
            discrete_entropy: de,
            value_loss: vl,
            recouple,
        };
        Ok(self.last)
    }
}

impl Learner for HybridAgent {
    fn act(&mut self, s: &[f64], explore: bool) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let (d, u) = if self.coupled_active {
            self.coupled.act(s, explore, &mut self.rng)?
        } else {
            let (u, _) = self.continuous.act(s, explore)?;
            (self.discrete.act(s, explore)?, u)
        };
        let a = u.iter().map(|x| x.tanh()).collect();
        Ok((d, u, a))
    }

    fn learn(&mut self, batch: &[&Transition]) -> Result<()> {
        self.update(batch).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub episodes: usize,
    /// Environment steps before the first update.
    pub warmup: usize,
    pub batch_size: usize,
    /// Updates after each environment step once warm; 0 disables learning.
    pub updates_per_step: usize,
    /// Learn only on every n-th environment step.
    pub update_every: usize,
    pub buffer_capacity: usize,
    /// Greedy evaluation cadence in episodes for callers that evaluate; 0
    /// means only at the end.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { episodes: 20, warmup: 200, batch_size: 32, updates_per_step: 1, update_every: 1, buffer_capacity: 100_000, eval_every: 0, seed: 0 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.update_every == 0 {
            return Err(Error::invalid("update_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    pub episode_return: f64,
    pub metrics: Vec<f64>,
}

/// One environment step as seen by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace<'a> {
    pub episode: usize,
    pub t: usize,
    pub discrete: &'a [usize],
    pub continuous: &'a [f64],
    pub reward: f64,
}

/// Seed used for the environment reset of a given training episode.
pub fn episode_seed(schedule_seed: u64, episode: usize) -> u64 {
    derive_seed(derive_seed(schedule_seed, TAG_EPISODE), episode as u64)
}

/// Resumable collect-and-learn state: replay buffer, sampling stream and
/// counters. Episodes can be interleaved with evaluation.
#[derive(Debug, Clone)]
pub struct Trainer {
    schedule: Schedule,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    episodes: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            buffer: ReplayBuffer::new(schedule.buffer_capacity),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(schedule.seed, TAG_LOOP)),
            schedule,
            episodes: 0,
            total_steps: 0,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Runs one exploring episode, learning as the schedule allows.
    pub fn run_episode<E, L, F>(&mut self, env: &mut E, learner: &mut L, mut on_step: F) -> Result<EpisodeLog>
    where
        E: HybridEnv,
        L: Learner,
        F: FnMut(&StepTrace<'_>),
    {
        let episode = self.episodes;
        let sc = &self.schedule;
        let slots = env.discrete_options().len();
        let mut s = env.reset(episode_seed(sc.seed, episode))?;
        let mut ret = 0.0;
        let mut t = 0;
        loop {
            let (mut d, u, a) = learner.act(&s, true)?;
            if d.is_empty() {
                d = vec![0; slots];
            }
            let (s_next, r, done) = env.step(&d, &u)?;
            on_step(&StepTrace { episode, t, discrete: &d, continuous: &u, reward: r });
            ret += r;
            t += 1;
            self.total_steps += 1;
            self.buffer.push(Transition { s, a, a_discrete: d, r, s_next: s_next.clone(), done })?;
            let warm = self.buffer.len() >= sc.batch_size.max(sc.warmup);
            if warm && self.total_steps % sc.update_every == 0 {
                for _ in 0..sc.updates_per_step {
                    let batch = self.buffer.sample(sc.batch_size, &mut self.rng);
                    learner.learn(&batch)?;
                }
            }
            s = s_next;
            if done {
                break;
            }
        }
        self.episodes += 1;
        Ok(EpisodeLog { episode, steps: t, episode_return: ret, metrics: env.metrics() })
    }
}

/// Collect-and-learn loop shared by every learner.
pub fn train_with<E, L, F>(env: &mut E, learner: &mut L, schedule: &Schedule, mut on_step: F) -> Result<Vec<EpisodeLog>>
where
    E: HybridEnv,
    L: Learner,
    F: FnMut(&StepTrace<'_>),
{
    let mut trainer = Trainer::new(schedule.clone())?;
    (0..schedule.episodes).map(|_| trainer.run_episode(env, learner, &mut on_step)).collect()
}

pub fn train<E: HybridEnv, L: Learner>(env: &mut E, learner: &mut L, schedule: &Schedule) -> Result<Vec<EpisodeLog>> {
    train_with(env, learner, schedule, |_| {})
}

/// The full hybrid training procedure.
pub fn train_h_dsac<E: HybridEnv>(env: &mut E, agent: &mut HybridAgent, schedule: &Schedule) -> Result<Vec<EpisodeLog>> {
    train(env, agent, schedule)
}

/// One greedy episode without learning.
pub fn evaluate<E: HybridEnv, L: Learner>(env: &mut E, learner: &mut L, seed: u64) -> Result<EpisodeLog> {
    let slots = env.discrete_options().len();
    let mut s = env.reset(seed)?;
    let (mut ret, mut t) = (0.0, 0);
    loop {
        let (mut d, u, _) = learner.act(&s, false)?;
        if d.is_empty() {
            d = vec![0; slots];
        }
        let (s_next, r, done) = env.step(&d, &u)?;
        ret += r;
        t += 1;
        s = s_next;
        if done {
            break;
        }
    }
    Ok(EpisodeLog { episode: 0, steps: t, episode_return: ret, metrics: env.metrics() })
}

#[cfg(test)]
mod tests;
