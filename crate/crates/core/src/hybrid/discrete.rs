use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsac::{
    clamp_std, clip_target, gaussian_log_density, loglik_grads, soft_return_target, softplus, softplus_inverse,
    DsacConfig, GaussianReturn, Transition,
};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, Activation, Adam, DenseNet};

/// Per-slot softmax of concatenated logits.
pub fn slot_probs(logits: &[f64], options: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(options.len());
    let mut off = 0;
    for &n in options {
        let z = &logits[off..off + n];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.push(e.into_iter().map(|v| v / s).collect());
        off += n;
    }
    out
}

pub fn one_hot(choice: &[usize], options: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; options.iter().sum()];
    let mut off = 0;
    for (&c, &n) in choice.iter().zip(options) {
        v[off + c.min(n - 1)] = 1.0;
        off += n;
    }
    v
}

pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi.ln() - qi.max(1e-300).ln())).sum()
}

fn sample_slot<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    if p.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// Categorical policy over several independent slots with a distributional
/// critic fed a one-hot encoding of the joint choice.
#[derive(Debug, Clone)]
pub struct DiscreteAgent {
    cfg: DsacConfig,
    obs_dim: usize,
    options: Vec<usize>,
    actor: DenseNet,
    actor_target: DenseNet,
    critic: DenseNet,
    critic_target: DenseNet,
    log_nu: f64,
    target_entropy: f64,
    actor_opt: Adam,
    critic_opt: Adam,
    nu_opt: Adam,
    rng: ChaCha8Rng,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(hidden);
    s.push(output);
    s
}

impl DiscreteAgent {
    /// `target_entropy_ratio` scales the entropy of the uniform joint choice
    /// into the entropy target.
    pub fn new(obs_dim: usize, options: Vec<usize>, cfg: DsacConfig, target_entropy_ratio: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if options.iter().any(|&n| n == 0) {
            return Err(Error::invalid("options", "every slot needs at least one option"));
        }
        let total: usize = options.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor = DenseNet::new(&sizes(obs_dim, &cfg.hidden, total.max(1)), Activation::Tanh, Activation::Identity, &mut rng);
        actor.scale_output_layer(0.01);
        let mut critic = DenseNet::new(&sizes(obs_dim + total, &cfg.hidden, 2), Activation::Tanh, Activation::Identity, &mut rng);
        critic.scale_output_layer(0.1);
        let n = critic.num_params();
        critic.params_mut()[n - 1] = softplus_inverse(cfg.rho_min + 1.0);
        let target_entropy = target_entropy_ratio * options.iter().map(|&n| (n as f64).ln()).sum::<f64>();
        Ok(Self {
            obs_dim,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(actor.num_params(), cfg.actor_lr),
            critic_opt: Adam::new(critic.num_params(), cfg.critic_lr),
            nu_opt: Adam::new(1, cfg.temperature_lr),
            log_nu: cfg.init_temperature.ln(),
            target_entropy,
            options,
            actor,
            critic,
            cfg,
            rng,
        })
    }

    pub fn options(&self) -> &[usize] {
        &self.options
    }

    pub fn temperature(&self) -> f64 {
        self.log_nu.exp()
    }

    pub fn set_temperature(&mut self, nu: f64) {
        self.log_nu = nu.ln();
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn critic_target(&self) -> &DenseNet {
        &self.critic_target
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    fn logits(&self, net: &DenseNet, s: &[f64]) -> Result<Vec<f64>> {
        let mut z = net.forward(s)?;
        z.truncate(self.options.iter().sum());
        Ok(z)
    }

    pub fn probs(&self, s: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(slot_probs(&self.logits(&self.actor, s)?, &self.options))
    }

    pub fn target_probs(&self, s: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(slot_probs(&self.logits(&self.actor_target, s)?, &self.options))
    }

    pub fn log_prob(&self, s: &[f64], a: &[usize]) -> Result<f64> {
        let p = self.probs(s)?;
        Ok(p.iter().zip(a).map(|(pi, &k)| pi[k].ln()).sum())
    }

    /// Samples every slot, or takes each slot's most likely option.
    pub fn act(&mut self, s: &[f64], explore: bool) -> Result<Vec<usize>> {
        let p = self.probs(s)?;
        Ok(if explore {
            p.iter().map(|pi| sample_slot(pi, &mut self.rng)).collect()
        } else {
            p.iter().map(|pi| argmax(pi)).collect()
        })
    }

    fn critic_input(&self, s: &[f64], a: &[usize]) -> Vec<f64> {
        let mut x = s.to_vec();
        x.extend(one_hot(a, &self.options));
        x
    }

    pub fn q(&self, s: &[f64], a: &[usize]) -> Result<GaussianReturn> {
        let out = self.critic.forward(&self.critic_input(s, a))?;
        Ok(GaussianReturn::from_raw(out[0], out[1], self.cfg.rho_min))
    }

    pub fn q_target(&self, s: &[f64], a: &[usize]) -> Result<GaussianReturn> {
        let out = self.critic_target.forward(&self.critic_input(s, a))?;
        Ok(GaussianReturn::from_raw(out[0], out[1], self.cfg.rho_min))
    }

    /// Same distributional loss as the continuous critic, on `(s, one_hot(a_d))`.
    pub fn critic_grads(&mut self, batch: &[&Transition]) -> Result<(Vec<f64>, f64)> {
        let mut grad = vec![0.0; self.critic.num_params()];
        let nu = self.temperature();
        let b = batch.len() as f64;
        let mut loss = 0.0;
        for t in batch {
            let tape = self.critic.forward_tape(&self.critic_input(&t.s, &t.a_discrete))?;
            let (q, raw) = (tape.output()[0], tape.output()[1]);
            let rho = clamp_std(softplus(raw), self.cfg.rho_min);
            let y = if t.done {
                t.r
            } else {
                let p = self.target_probs(&t.s_next)?;
                let a_next: Vec<usize> = p.iter().map(|pi| sample_slot(pi, &mut self.rng)).collect();
                let logp: f64 = p.iter().zip(&a_next).map(|(pi, &k)| pi[k].ln()).sum();
                let next = self.q_target(&t.s_next, &a_next)?;
                soft_return_target(t.r, false, self.cfg.discount, next, logp, nu, &mut self.rng)
            };
            let (gq, _) = loglik_grads(y, q, rho);
            let (_, grho) = loglik_grads(clip_target(y, q, self.cfg.clip), q, rho);
            let slope = GaussianReturn::std_slope(raw, self.cfg.rho_min);
            self.critic.backward(&tape, &[-gq / b, -grho * slope / b], &mut grad)?;
            loss -= gaussian_log_density(y, q, rho) / b;
        }
        Ok((grad, loss))
    }

    /// Critic means for every option of every slot, the other slots held at
    /// `base`.
    pub fn slot_values(&self, s: &[f64], base: &[usize]) -> Result<Vec<Vec<f64>>> {
        let pre = self.critic.first_preactivation(&self.critic_input(s, base))?;
        let mut out = Vec::with_capacity(self.options.len());
        let mut off = self.obs_dim;
        for (i, &n) in self.options.iter().enumerate() {
            let current = self.critic.input_column(off + base[i]);
            let mut row = Vec::with_capacity(n);
            for k in 0..n {
                if k == base[i] {
                    row.push(self.critic.forward_from_preactivation(&pre)[0]);
                    continue;
                }
                let col = self.critic.input_column(off + k);
                let shifted: Vec<f64> = pre.iter().zip(&col).zip(&current).map(|((p, c), o)| p + c - o).collect();
                row.push(self.critic.forward_from_preactivation(&shifted)[0]);
            }
            out.push(row);
            off += n;
        }
        Ok(out)
    }

    /// Gradient of `mean_s sum_i sum_k p_ik (nu log p_ik - Q_ik)` with the
    /// expectation over each slot taken exactly. `bases` fixes the other
    /// slots when a slot is varied. Returns gradient, objective and mean
    /// policy entropy.
    pub fn actor_grads_with_bases(&self, states: &[&[f64]], bases: &[Vec<usize>]) -> Result<(Vec<f64>, f64, f64)> {
        let nu = self.temperature();
        let b = states.len() as f64;
        let mut grad = vec![0.0; self.actor.num_params()];
        let total: usize = self.options.iter().sum();
        let (mut objective, mut entropy) = (0.0, 0.0);
        for (s, base) in states.iter().zip(bases) {
            let tape = self.actor.forward_tape(s)?;
            let probs = slot_probs(&tape.output()[..total], &self.options);
            let values = self.slot_values(s, base)?;
            let mut g_out = vec![0.0; self.actor.output_dim()];
            let mut off = 0;
            for (p, qv) in probs.iter().zip(&values) {
                let g: Vec<f64> = p.iter().zip(qv).map(|(pk, qk)| nu * pk.ln() - qk).collect();
                let mean: f64 = p.iter().zip(&g).map(|(pk, gk)| pk * gk).sum();
                for k in 0..p.len() {
                    g_out[off + k] = p[k] * (g[k] - mean) / b;
                }
                objective += mean / b;
                entropy -= p.iter().map(|pk| pk * pk.ln()).sum::<f64>() / b;
                off += p.len();
            }
            self.actor.backward(&tape, &g_out, &mut grad)?;
        }
        Ok((grad, objective, entropy))
    }

    pub fn actor_objective(&self, states: &[&[f64]], bases: &[Vec<usize>]) -> Result<f64> {
        let nu = self.temperature();
        let mut total = 0.0;
        for (s, base) in states.iter().zip(bases) {
            let probs = self.probs(s)?;
            let values = self.slot_values(s, base)?;
            for (p, qv) in probs.iter().zip(&values) {
                total += p.iter().zip(qv).map(|(pk, qk)| pk * (nu * pk.ln() - qk)).sum::<f64>();
            }
        }
        Ok(total / states.len() as f64)
    }

    /// Gradient for `log nu`; the expected log-probability is exact.
    pub fn temperature_grad(&self, entropy: f64) -> f64 {
        entropy - self.target_entropy
    }

    pub fn update(&mut self, batch: &[&Transition]) -> Result<(f64, f64, f64)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must be non-empty"));
        }
        let (mut cg, critic_loss) = self.critic_grads(batch)?;
        clip_global_norm(&mut cg, self.cfg.grad_clip);
        self.critic_opt.step_net(&mut self.critic, &cg);

        let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let mut bases = Vec::with_capacity(states.len());
        for s in &states {
            bases.push(self.act(s, true)?);
        }
        let (mut ag, actor_loss, entropy) = self.actor_grads_with_bases(&states, &bases)?;
        clip_global_norm(&mut ag, self.cfg.grad_clip);
        self.actor_opt.step_net(&mut self.actor, &ag);

        if self.cfg.learn_temperature {
            let g = self.temperature_grad(entropy);
            let mut p = [self.log_nu];
            self.nu_opt.step(&mut p, &[g]);
            self.log_nu = p[0].clamp(-20.0, 5.0);
        }
        let online = self.critic.params().to_vec();
        polyak_update(self.critic_target.params_mut(), &online, self.cfg.tau);
        let online = self.actor.params().to_vec();
        polyak_update(self.actor_target.params_mut(), &online, self.cfg.tau);
        Ok((critic_loss, actor_loss, entropy))
    }
}
