use super::toy::{HybridBandit, TrackingTask};
use super::*;
use crate::dsac::squashed_log_prob;
use rand::{Rng, SeedableRng};

fn small_cfg() -> HybridConfig {
    HybridConfig { dsac: DsacConfig { hidden: vec![8, 8], ..DsacConfig::default() }, ..HybridConfig::default() }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_head(rng: &mut ChaCha8Rng, options: &[usize], d: usize) -> FactoredHead {
    let total: usize = options.iter().sum();
    FactoredHead {
        probs: slot_probs(&rand_vec(rng, total, 2.0), options),
        mean: rand_vec(rng, d, 1.0),
        log_std: rand_vec(rng, d, 0.5),
    }
}

#[test]
fn uniform_factored_log_prob() {
    let (slots, m) = (3, 4);
    let head = FactoredHead {
        probs: vec![vec![0.25; m]; slots],
        mean: vec![0.1, -0.2],
        log_std: vec![0.0, -0.5],
    };
    let u = [0.3, 0.7];
    let lp = head.log_prob(&[0, 3, 1], &u);
    let expected = -(slots as f64) * (m as f64).ln() + squashed_log_prob(&u, &head.mean, &head.log_std);
    assert!((lp - expected).abs() < 1e-12);
}

#[test]
fn joint_discrete_probabilities_enumerate_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = slot_probs(&rand_vec(&mut rng, 4, 3.0), &[2, 2]);
    let mut total = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let joint = p[0][a] * p[1][b];
            let head = FactoredHead { probs: p.clone(), mean: vec![], log_std: vec![] };
            assert!((head.log_prob(&[a, b], &[]).exp() - joint).abs() < 1e-14);
            total += joint;
        }
    }
    assert!((total - 1.0).abs() < 1e-14);
}

#[test]
fn kl_parts_match_closed_forms() {
    let a = FactoredHead { probs: vec![vec![0.5, 0.5]], mean: vec![0.0], log_std: vec![0.0] };
    let b = FactoredHead { probs: vec![vec![0.25, 0.75]], mean: vec![1.0], log_std: vec![0.0] };
    let (kd, kc) = a.kl_parts(&b);
    assert!((kc - 0.5).abs() < 1e-12);
    let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kd - expected).abs() < 1e-12);
    assert_eq!(a.kl_parts(&a), (0.0, 0.0));
}

#[test]
fn slot_values_match_full_critic_evaluations() {
    let agent = DiscreteAgent::new(3, vec![3, 2, 4], small_cfg().dsac, 0.5, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = rand_vec(&mut rng, 3, 1.0);
    let base = vec![1, 0, 2];
    let values = agent.slot_values(&s, &base).unwrap();
    for (i, row) in values.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let mut a = base.clone();
            a[i] = k;
            assert!((agent.q(&s, &a).unwrap().q_mean - v).abs() < 1e-12);
        }
    }
}

#[test]
fn discrete_actor_gradient_matches_finite_differences() {
    let mut agent = DiscreteAgent::new(2, vec![3, 2], small_cfg().dsac, 0.5, 4).unwrap();
    agent.set_temperature(0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = agent.actor().num_params();
    let bumped: Vec<f64> = agent.actor().params().iter().map(|p| p + rng.random_range(-0.5..0.5)).collect();
    agent.actor_mut().set_params(&bumped).unwrap();
    let states: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 2, 1.0)).collect();
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    let bases: Vec<Vec<usize>> = (0..5).map(|_| vec![rng.random_range(0..3), rng.random_range(0..2)]).collect();
    let (grad, obj, _) = agent.actor_grads_with_bases(&refs, &bases).unwrap();
    assert!((obj - agent.actor_objective(&refs, &bases).unwrap()).abs() < 1e-12);
    let h = 1e-6;
    for i in (0..n).step_by(3) {
        let mut p = bumped.clone();
        p[i] += h;
        agent.actor_mut().set_params(&p).unwrap();
        let up = agent.actor_objective(&refs, &bases).unwrap();
        p[i] -= 2.0 * h;
        agent.actor_mut().set_params(&p).unwrap();
        let down = agent.actor_objective(&refs, &bases).unwrap();
        let fd = (up - down) / (2.0 * h);
        assert!((fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grad[i]);
    }
}

#[test]
fn symmetric_values_give_a_stationary_uniform_policy() {
    let mut agent = DiscreteAgent::new(2, vec![2, 3], small_cfg().dsac, 0.5, 5).unwrap();
    agent.actor_mut().scale_output_layer(0.0);
    let dim = agent.critic().input_dim();
    let hidden = agent.critic().sizes()[1];
    // Zero the weights that read the one-hot block so every option scores the same.
    let mut p = agent.critic().params().to_vec();
    for j in 0..hidden {
        for i in 2..dim {
            p[j * dim + i] = 0.0;
        }
    }
    agent.critic_mut().set_params(&p).unwrap();
    let s = [0.3, -0.1];
    let (grad, _, entropy) = agent.actor_grads_with_bases(&[&s], &[vec![0, 0]]).unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-15));
    assert!((entropy - (2f64.ln() + 3f64.ln())).abs() < 1e-12);
}

#[test]
fn discrete_agent_concentrates_on_the_better_arm() {
    let mut cfg = small_cfg().dsac;
    cfg.learn_temperature = false;
    cfg.init_temperature = 0.01;
    cfg.actor_lr = 3e-3;
    cfg.critic_lr = 3e-3;
    let mut agent = DiscreteAgent::new(1, vec![2], cfg, 0.5, 2).unwrap();
    let mut buffer = ReplayBuffer::new(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1500 {
        let d = agent.act(&[1.0], true).unwrap();
        let r = if d[0] == 0 { 1.0 } else { 0.0 };
        buffer.push(Transition { s: vec![1.0], a: vec![], a_discrete: d, r, s_next: vec![1.0], done: true }).unwrap();
        if buffer.len() >= 32 {
            let b = buffer.sample(32, &mut rng);
            agent.update(&b).unwrap();
        }
    }
    let p = agent.probs(&[1.0]).unwrap();
    assert!(p[0][0] >= 0.99, "{:?}", p);
}

#[test]
fn discrete_temperature_gradient_sign() {
    let agent = DiscreteAgent::new(1, vec![4, 4], small_cfg().dsac, 0.5, 0).unwrap();
    assert!((agent.target_entropy() - 4f64.ln()).abs() < 1e-12);
    assert!(agent.temperature_grad(2.0) > 0.0);
    assert!(agent.temperature_grad(0.5) < 0.0);
}

#[test]
fn recouple_is_a_no_op_at_the_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pol = CoupledPolicy::new(2, vec![2, 3], 2, &[8], (-5.0, 2.0), &mut rng);
    let states: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, 2, 1.0)).collect();
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    let targets: Vec<FactoredHead> = refs.iter().map(|s| pol.head(s).unwrap()).collect();
    let before = pol.net().params().to_vec();
    let out = pol.recouple_step(&refs, &targets, &KlBudget::default(), 0.1, 10).unwrap();
    assert!(!out.accepted);
    assert_eq!(out.objective_before, 0.0);
    assert_eq!(pol.net().params(), before.as_slice());
}

#[test]
fn accepted_recouple_steps_respect_the_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let options = vec![3, 2];
    let mut pol = CoupledPolicy::new(2, options.clone(), 2, &[16], (-5.0, 2.0), &mut rng);
    let states: Vec<Vec<f64>> = (0..16).map(|_| rand_vec(&mut rng, 2, 1.0)).collect();
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    let targets: Vec<FactoredHead> = (0..16).map(|_| random_head(&mut rng, &options, 2)).collect();
    let budget = KlBudget::default();
    let first = pol.objective(&refs, &targets).unwrap();
    let mut accepted = 0;
    for _ in 0..200 {
        let old: Vec<FactoredHead> = refs.iter().map(|s| pol.head(s).unwrap()).collect();
        let out = pol.recouple_step(&refs, &targets, &budget, 0.5, 12).unwrap();
        if !out.accepted {
            continue;
        }
        accepted += 1;
        assert!(out.objective_after <= out.objective_before);
        // Recompute the step divergence from the stored heads.
        let (mut kd, mut kc) = (0.0, 0.0);
        for (s, o) in refs.iter().zip(&old) {
            let new = pol.head(s).unwrap();
            for (p, q) in o.probs.iter().zip(&new.probs) {
                kd += p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
            }
            for j in 0..2 {
                let (s1, s2) = (o.log_std[j].exp(), new.log_std[j].exp());
                let dm = o.mean[j] - new.mean[j];
                kc += ((s2 / s1).ln() + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5) / 2.0;
            }
        }
        kd /= 16.0;
        kc /= 16.0;
        assert!(kd <= budget.discrete + 1e-12 && kc <= budget.continuous + 1e-12 && kd + kc <= budget.total);
    }
    assert!(accepted > 100);
    let last = pol.objective(&refs, &targets).unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn recouple_rejects_when_the_budget_cannot_be_met() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let options = vec![3];
    let mut pol = CoupledPolicy::new(1, options.clone(), 1, &[8], (-5.0, 2.0), &mut rng);
    let s = [0.5];
    let targets = vec![random_head(&mut rng, &options, 1)];
    let before = pol.net().params().to_vec();
    let tiny = KlBudget { total: 1e-300, discrete: 1e-300, continuous: 1e-300 };
    let out = pol.recouple_step(&[&s], &targets, &tiny, 1.0, 3).unwrap();
    assert!(!out.accepted);
    assert_eq!(out.backtracks, 3);
    assert_eq!(pol.net().params(), before.as_slice());
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let options = vec![2, 3];
    let mut pol = CoupledPolicy::new(2, options.clone(), 2, &[6], (-5.0, 2.0), &mut rng);
    let states: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 2, 1.0)).collect();
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    let targets: Vec<FactoredHead> = (0..4).map(|_| random_head(&mut rng, &options, 2)).collect();
    let grad = pol.objective_grads(&refs, &targets).unwrap();
    let base = pol.net().params().to_vec();
    let h = 1e-6;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        pol.net_mut().set_params(&p).unwrap();
        let up = pol.objective(&refs, &targets).unwrap();
        p[i] -= 2.0 * h;
        pol.net_mut().set_params(&p).unwrap();
        let down = pol.objective(&refs, &targets).unwrap();
        let fd = (up - down) / (2.0 * h);
        assert!((fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grad[i]);
    }
}

#[test]
fn zero_episodes_leave_the_agent_untouched() {
    let mut agent = HybridAgent::new(1, vec![2], 1, small_cfg(), 1).unwrap();
    let before = (agent.continuous().actor().params().to_vec(), agent.discrete().actor().params().to_vec());
    let logs = train(&mut HybridBandit::default(), &mut agent, &Schedule { episodes: 0, ..Schedule::default() }).unwrap();
    assert!(logs.is_empty());
    assert_eq!(agent.continuous().actor().params(), before.0.as_slice());
    assert_eq!(agent.discrete().actor().params(), before.1.as_slice());
    assert!(!agent.coupled_active());
}

#[test]
fn degenerate_discrete_part_reduces_to_the_continuous_agent() {
    let cfg = small_cfg();
    let schedule = Schedule { episodes: 100, warmup: 32, batch_size: 32, seed: 5, ..Schedule::default() };
    let mut env = TrackingTask::new(3, 10, 0.4);
    let mut plain = Agent::new(1, 1, cfg.dsac.clone(), 11).unwrap();
    let mut plain_actions = Vec::new();
    let a = train_with(&mut env, &mut plain, &schedule, |t| plain_actions.push(t.continuous.to_vec())).unwrap();
    let mut hybrid = HybridAgent::new(1, vec![1; 3], 1, cfg, 11).unwrap();
    assert!(hybrid.is_degenerate());
    let mut hybrid_actions = Vec::new();
    let b = train_with(&mut env, &mut hybrid, &schedule, |t| hybrid_actions.push(t.continuous.to_vec())).unwrap();
    assert_eq!(plain_actions.len(), 1000);
    assert_eq!(plain_actions, hybrid_actions);
    assert_eq!(a, b);
    assert_eq!(plain.actor().params(), hybrid.continuous().actor().params());
    assert_eq!(plain.critic().params(), hybrid.continuous().critic().params());
    assert!(hybrid.last_stats().recouple.is_none());
}

#[test]
fn value_critic_fits_terminal_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut v = ValueCritic::new(1, vec![2], 1, &[16], 1e-2, &mut rng);
    let batch: Vec<Transition> = (0..2)
        .map(|k| Transition { s: vec![1.0], a: vec![0.0], a_discrete: vec![k], r: k as f64, s_next: vec![1.0], done: true })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let next = vec![(vec![0], vec![0.0]); 2];
    let mut loss = f64::INFINITY;
    for _ in 0..2000 {
        loss = v.update(&refs, &next, 0.99, 0.01, 10.0).unwrap();
    }
    assert!(loss < 1e-4, "{loss}");
    assert!((v.value(&[1.0], &[1], &[0.0]).unwrap() - 1.0).abs() < 0.02);
    assert_eq!(squared_value_gap(3.0, 1.0), 2.0);
}

#[test]
fn hybrid_agent_finds_the_better_arm() {
    let mut cfg = HybridConfig { dsac: DsacConfig { hidden: vec![32, 32], ..DsacConfig::default() }, ..HybridConfig::default() };
    cfg.dsac.learn_temperature = false;
    cfg.dsac.init_temperature = 0.02;
    cfg.dsac.actor_lr = 1e-3;
    cfg.dsac.critic_lr = 1e-3;
    let mut agent = HybridAgent::new(1, vec![2], 1, cfg, 3).unwrap();
    let schedule = Schedule { episodes: 4000, warmup: 64, batch_size: 64, seed: 1, ..Schedule::default() };
    let mut env = HybridBandit::default();
    train(&mut env, &mut agent, &schedule).unwrap();
    let (d, _, a) = agent.act(&HybridBandit::STATE, false).unwrap();
    assert_eq!(d, vec![1]);
    assert!((a[0] + 0.4).abs() < 0.1, "{a:?}");
    assert!(agent.coupled_active());
}

#[test]
fn env_runs_through_the_shared_loop() {
    let mut sc = crate::config::Scenario::default();
    sc.horizon = 4;
    let mut env = Env::new(sc, 0).unwrap();
    let obs = HybridEnv::obs_dim(&env);
    let options = HybridEnv::discrete_options(&env);
    let cont = HybridEnv::continuous_dim(&env);
    let mut agent = HybridAgent::new(obs, options, cont, small_cfg(), 0).unwrap();
    let schedule = Schedule { episodes: 2, warmup: 4, batch_size: 4, seed: 0, ..Schedule::default() };
    let logs = train(&mut env, &mut agent, &schedule).unwrap();
    assert_eq!(logs.len(), 2);
    assert!(logs.iter().all(|l| l.steps == 4 && l.episode_return.is_finite()));
    assert_eq!(logs[0].metrics.len(), 2 * env.specs().len());
}
