//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sagin_hfl::config::Scenario;
use sagin_hfl::dsac::{DsacConfig, ReplayBuffer, Transition};
use sagin_hfl::env::Env;
use sagin_hfl::hybrid::{HybridAgent, HybridConfig, HybridEnv};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The default scenario, reset and ready to step.
pub fn default_env() -> Env {
    let mut env = Env::new(Scenario::default(), 0).expect("default scenario is valid");
    env.reset(1).expect("reset");
    env
}

/// A buffer of `n` transitions gathered with uniformly random actions.
pub fn random_buffer(env: &mut Env, n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = rng(seed);
    let mut buf = ReplayBuffer::new(n);
    let mut s = HybridEnv::reset(env, seed).expect("reset");
    for i in 0..n {
        let a = env.random_action(&mut rng);
        let (s2, r, done) = HybridEnv::step(env, &a.discrete, &a.continuous).expect("step");
        buf.push(Transition {
            s: s.clone(),
            a: a.continuous.iter().map(|x| x.tanh()).collect(),
            a_discrete: a.discrete.clone(),
            r,
            s_next: s2.clone(),
            done,
        })
        .expect("dimensions agree");
        s = if done { HybridEnv::reset(env, seed + i as u64 + 1).expect("reset") } else { s2 };
    }
    buf
}

pub fn hybrid_agent(env: &Env, hidden: &[usize]) -> HybridAgent {
    let cfg = HybridConfig { dsac: DsacConfig { hidden: hidden.to_vec(), ..DsacConfig::default() }, ..HybridConfig::default() };
    HybridAgent::new(env.obs_dim(), env.discrete_options(), env.continuous_dim(), cfg, 0).expect("agent")
}
