use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn small_cfg() -> DsacConfig {
    DsacConfig { hidden: vec![8, 8], ..DsacConfig::default() }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_transition(rng: &mut ChaCha8Rng, obs: usize, act: usize, done: bool) -> Transition {
    Transition {
        s: (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a: (0..act).map(|_| rng.random_range(-0.9..0.9)).collect(),
        a_discrete: vec![],
        r: rng.random_range(-2.0..2.0),
        s_next: (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect(),
        done,
    }
}

#[test]
fn clamp_std_examples() {
    assert_eq!(clamp_std(0.5, 1.0), 1.0);
    assert_eq!(clamp_std(2.0, 1.0), 2.0);
    assert_eq!(clamp_std(1.0, 1.0), 1.0);
    assert_eq!(clamp_std(f64::NAN, 1.0), 1.0);
}

#[test]
fn clip_target_examples() {
    assert_eq!(clip_target(3.0, 1.0, 10.0), 3.0);
    assert_eq!(clip_target(1.0 + 20.0, 1.0, 10.0), 11.0);
    assert_eq!(clip_target(-50.0, 1.0, 10.0), -9.0);
}

proptest! {
    #[test]
    fn clipped_target_stays_in_band(t in -1e6f64..1e6, q in -1e3f64..1e3, c in 1e-3f64..100.0) {
        prop_assert!((clip_target(t, q, c) - q).abs() <= c + 1e-12 * q.abs().max(1.0));
    }
}

#[test]
fn loglik_gradient_special_points() {
    let (gq, gr) = loglik_grads(2.0, 2.0, 1.5);
    assert_eq!(gq, 0.0);
    assert!((gr + 1.0 / 1.5).abs() < 1e-15);
    let (_, gr) = loglik_grads(3.0 + 1.7, 3.0, 1.7);
    assert!(gr.abs() < 1e-12);
}

#[test]
fn loglik_gradients_match_finite_differences() {
    let lp = |t: f64, q: f64, r: f64| -r.ln() - (t - q) * (t - q) / (2.0 * r * r);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    for _ in 0..1000 {
        let t = rng.random_range(-20.0..20.0);
        let q = rng.random_range(-20.0..20.0);
        let r = rng.random_range(1.0..10.0);
        let (gq, gr) = loglik_grads(t, q, r);
        let fq = (lp(t, q + h, r) - lp(t, q - h, r)) / (2.0 * h);
        let fr = (lp(t, q, r + h) - lp(t, q, r - h)) / (2.0 * h);
        assert!(rel_err(gq, fq) < 1e-6 || (gq - fq).abs() < 1e-8, "{gq} vs {fq}");
        assert!(rel_err(gr, fr) < 1e-6 || (gr - fr).abs() < 1e-8, "{gr} vs {fr}");
    }
}

#[test]
fn analytic_gradients_are_negative_kl_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    for _ in 0..200 {
        let (m, s) = (rng.random_range(-5.0..5.0), rng.random_range(0.1..3.0));
        let (q, r) = (rng.random_range(-5.0..5.0), rng.random_range(1.0..4.0));
        let (gq, gr) = analytic_loglik_grads(m, s, q, r);
        let fq = -(gaussian_kl(m, s, q + h, r) - gaussian_kl(m, s, q - h, r)) / (2.0 * h);
        let fr = -(gaussian_kl(m, s, q, r + h) - gaussian_kl(m, s, q, r - h)) / (2.0 * h);
        assert!((gq - fq).abs() < 1e-6 * gq.abs().max(1.0));
        assert!((gr - fr).abs() < 1e-6 * gr.abs().max(1.0));
    }
}

#[test]
fn unit_gaussian_kl() {
    assert!((gaussian_kl(0.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
    assert_eq!(gaussian_kl(0.3, 2.0, 0.3, 2.0), 0.0);
}

#[test]
fn terminal_target_is_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let next = GaussianReturn { q_mean: 5.0, q_std: 2.0 };
    assert_eq!(soft_return_target(0.7, true, 0.99, next, -1.0, 0.2, &mut rng), 0.7);
}

#[test]
fn degenerate_target_is_bellman() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let next = GaussianReturn { q_mean: 5.0, q_std: 0.0 };
    assert_eq!(soft_return_target(0.7, false, 0.9, next, -1.3, 0.0, &mut rng), 0.7 + 0.9 * 5.0);
}

#[test]
fn sampled_target_mean_matches_backup() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (r, g, m, s, lp, nu) = (0.3, 0.99, 2.0, 1.5, -0.8, 0.2);
    let next = GaussianReturn { q_mean: m, q_std: s };
    let n = 100_000;
    let mean = (0..n).map(|_| soft_return_target(r, false, g, next, lp, nu, &mut rng)).sum::<f64>() / n as f64;
    let expected = r + g * (m - nu * lp);
    let se = g * s / (n as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    assert_eq!(expected_soft_target(r, false, g, m, lp, nu), expected);
}

#[test]
fn squash_correction_is_stable() {
    for u in [-40.0, -3.0, 0.0, 0.5, 3.0, 40.0] {
        let direct = (1.0 - f64::tanh(u).powi(2)).ln();
        let v = log_one_minus_tanh_sq(u);
        assert!(v.is_finite());
        if u.abs() < 5.0 {
            assert!((v - direct).abs() < 1e-12);
        }
    }
}

/// Loss whose gradient the critic update follows when targets are
/// deterministic and inside the clip band.
fn terminal_nll(agent: &Agent, batch: &[&Transition]) -> f64 {
    batch
        .iter()
        .map(|t| {
            let g = agent.q(&t.s, &t.a).unwrap();
            -gaussian_log_density(t.r, g.q_mean, g.q_std)
        })
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = DsacConfig { rho_min: 0.2, ..small_cfg() };
    let mut agent = Agent::new(3, 2, cfg, 5).unwrap();
    let data: Vec<Transition> = (0..6).map(|_| random_transition(&mut rng, 3, 2, true)).collect();
    let batch: Vec<&Transition> = data.iter().collect();
    let (grad, loss, _, _) = agent.critic_grads(&batch).unwrap();
    assert!((loss - terminal_nll(&agent, &batch)).abs() < 1e-12);
    let h = 1e-6;
    for i in (0..grad.len()).step_by(7) {
        let mut plus = agent.clone();
        plus.critic_mut().params_mut()[i] += h;
        let mut minus = agent.clone();
        minus.critic_mut().params_mut()[i] -= h;
        let fd = (terminal_nll(&plus, &batch) - terminal_nll(&minus, &batch)) / (2.0 * h);
        assert!((grad[i] - fd).abs() < 1e-5 * fd.abs().max(1e-3), "param {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let agent = Agent::new(3, 2, small_cfg(), 6).unwrap();
    let states: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let noise: Vec<Vec<f64>> = (0..5).map(|_| (0..2).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
    let (grad, obj, _) = agent.actor_grads_with_noise(&refs, &noise).unwrap();
    assert!((obj - agent.actor_objective(&refs, &noise).unwrap()).abs() < 1e-12);
    let h = 1e-6;
    for i in (0..grad.len()).step_by(5) {
        let mut plus = agent.clone();
        plus.actor_mut().params_mut()[i] += h;
        let mut minus = agent.clone();
        minus.actor_mut().params_mut()[i] -= h;
        let fd = (plus.actor_objective(&refs, &noise).unwrap() - minus.actor_objective(&refs, &noise).unwrap()) / (2.0 * h);
        assert!((grad[i] - fd).abs() < 1e-4 * fd.abs().max(1e-4), "param {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn huge_temperature_widens_the_policy() {
    let mut agent = Agent::new(2, 1, DsacConfig { learn_temperature: false, ..small_cfg() }, 1).unwrap();
    agent.set_temperature(1e6);
    // start narrow: the squashed distribution's entropy peaks near unit std
    let n = agent.actor().num_params();
    agent.actor_mut().params_mut()[n - 1] = -3.0;
    let s = [0.2, -0.4];
    let before = agent.policy(&s).unwrap().log_std[0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let noise: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let states: Vec<&[f64]> = vec![&s; 16];
        let (g, _, _) = agent.actor_grads_with_noise(&states, &noise).unwrap();
        agent.apply_actor_grads(g);
    }
    assert!(agent.policy(&s).unwrap().log_std[0] > before);
}

#[test]
fn temperature_gradient_signs() {
    let agent = Agent::new(2, 3, small_cfg(), 0).unwrap();
    // entropy exactly at target: -log pi = -3
    assert_eq!(agent.temperature_grad(&[3.0, 3.0]), 0.0);
    let mut a = agent.clone();
    let before = a.temperature();
    // entropy -5 is below the target of -3
    let g = a.temperature_grad(&[5.0]);
    a.apply_temperature_grad(g);
    assert!(a.temperature() > before);
}

#[test]
fn temperature_stays_positive_under_random_updates() {
    let mut agent = Agent::new(1, 1, DsacConfig { temperature_lr: 0.1, ..small_cfg() }, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let lp: f64 = rng.random_range(-1e3..1e3);
        let g = agent.temperature_grad(&[lp]);
        agent.apply_temperature_grad(g);
        assert!(agent.temperature() > 0.0 && agent.temperature().is_finite());
    }
}

#[test]
fn soft_update_copy_and_geometric_convergence() {
    let mut a = Agent::new(2, 1, small_cfg(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for p in a.critic_mut().params_mut() {
        *p += rng.random_range(-1.0..1.0);
    }
    let online = a.critic().params().to_vec();
    let start = a.critic_target().params().to_vec();
    let tau = 0.1;
    let mut b = a.clone();
    for _ in 0..30 {
        b.soft_update_targets(tau).unwrap();
    }
    let k = 0.9f64.powi(30);
    for ((t, o), s) in b.critic_target().params().iter().zip(&online).zip(&start) {
        assert!((t - (o + k * (s - o))).abs() < 1e-12);
    }
    a.soft_update_targets(1.0).unwrap();
    assert_eq!(a.critic_target().params(), a.critic().params());
    assert!(a.soft_update_targets(0.0).is_err());
}

#[test]
fn greedy_actions_repeat_and_stay_in_range() {
    let mut agent = Agent::new(2, 2, small_cfg(), 3).unwrap();
    let s = [0.1, 0.9];
    assert_eq!(agent.sample_action(&s, false).unwrap(), agent.sample_action(&s, false).unwrap());
    for _ in 0..1000 {
        assert!(agent.sample_action(&s, true).unwrap().iter().all(|a| a.abs() < 1.0));
    }
}

#[test]
fn exploration_is_centred_on_the_policy() {
    let mut agent = Agent::new(1, 1, small_cfg(), 3).unwrap();
    for p in agent.actor_mut().params_mut() {
        *p *= 30.0;
    }
    let s = [0.4];
    let head = agent.policy(&s).unwrap();
    let (mu, sigma) = (head.mean[0], head.log_std[0].exp());
    let n = 100_000;
    let (mut su, mut sa) = (0.0, 0.0);
    for _ in 0..n {
        let (u, a) = agent.act(&s, true).unwrap();
        su += u[0];
        sa += a[0];
    }
    let se = sigma / (n as f64).sqrt();
    assert!((su / n as f64 - mu).abs() < 3.0 * se);
    // E[tanh(mu + sigma z)] by a fine quadrature over z
    let m = 20_000;
    let mut e = 0.0;
    let mut wsum = 0.0;
    for i in 0..=m {
        let z = -10.0 + 20.0 * i as f64 / m as f64;
        let w = (-0.5 * z * z).exp();
        e += w * (mu + sigma * z).tanh();
        wsum += w;
    }
    assert!((sa / n as f64 - e / wsum).abs() < 3.0 * se);
}

#[test]
fn log_prob_agrees_with_sampling_density() {
    let agent = Agent::new(2, 2, small_cfg(), 1).unwrap();
    let s = [0.3, 0.3];
    let head = agent.policy(&s).unwrap();
    let u = head.presquash(&[0.4, -1.1]);
    let a: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
    let direct: f64 = (0..2)
        .map(|j| {
            let sd = head.log_std[j].exp();
            let z = (u[j] - head.mean[j]) / sd;
            -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a[j] * a[j]).ln()
        })
        .sum();
    assert!((agent.log_prob(&s, &a).unwrap() - direct).abs() < 1e-8);
}

#[test]
fn long_training_on_noise_stays_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agent = Agent::new(4, 2, DsacConfig { actor_lr: 1e-2, critic_lr: 1e-2, ..small_cfg() }, 2).unwrap();
    let data: Vec<Transition> = (0..256).map(|i| random_transition(&mut rng, 4, 2, i % 5 == 0)).collect();
    let mut buffer = ReplayBuffer::new(512);
    for t in data {
        buffer.push(t).unwrap();
    }
    for _ in 0..2000 {
        let b = buffer.sample(8, &mut rng);
        let stats = agent.update(&b).unwrap();
        assert!(stats.critic_loss.is_finite() && stats.actor_loss.is_finite());
    }
    assert!(agent.actor().params().iter().chain(agent.critic().params()).all(|p| p.is_finite()));
}

#[test]
fn analytic_mode_trains() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut agent = Agent::new(2, 1, DsacConfig { analytic_kl: true, ..small_cfg() }, 0).unwrap();
    let data: Vec<Transition> = (0..32).map(|_| random_transition(&mut rng, 2, 1, false)).collect();
    let batch: Vec<&Transition> = data.iter().collect();
    assert!(agent.update(&batch).unwrap().critic_loss.is_finite());
}

#[test]
fn empty_batches_and_bad_configs_are_rejected() {
    let mut agent = Agent::new(2, 1, small_cfg(), 0).unwrap();
    assert!(agent.update(&[]).is_err());
    assert!(Agent::new(2, 0, small_cfg(), 0).is_err());
    assert!(Agent::new(2, 1, DsacConfig { discount: 1.0, ..small_cfg() }, 0).is_err());
    assert!(Agent::new(2, 1, DsacConfig { tau: 0.0, ..small_cfg() }, 0).is_err());
}

#[test]
fn buffer_ring_and_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf = ReplayBuffer::new(3);
    let ts: Vec<Transition> = (0..5)
        .map(|i| Transition { a_discrete: vec![i, 2 * i], ..random_transition(&mut rng, 2, 1, i % 2 == 0) })
        .collect();
    for t in &ts {
        buf.push(t.clone()).unwrap();
    }
    assert_eq!(buf.len(), 3);
    // slots 0 and 1 were overwritten by the 4th and 5th pushes
    assert_eq!(buf.get(0), Some(&ts[3]));
    assert_eq!(buf.get(2), Some(&ts[2]));
    let mut bytes = Vec::new();
    buf.write_to(&mut bytes).unwrap();
    let back = ReplayBuffer::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back, buf);
    bytes[0] = b'X';
    assert!(ReplayBuffer::read_from(bytes.as_slice()).is_err());
    let mut bad = ts[0].clone();
    bad.r = f64::NAN;
    assert!(buf.push(bad).is_err());
}

#[test]
fn shared_buffer_accepts_concurrent_appends() {
    let shared = std::sync::Arc::new(SharedReplayBuffer::new(10_000));
    let handles: Vec<_> = (0..4)
        .map(|k| {
            let b = shared.clone();
            std::thread::spawn(move || {
                for i in 0..500 {
                    let v = (k * 1000 + i) as f64;
                    b.push(Transition { s: vec![v], a: vec![v], a_discrete: vec![], r: v, s_next: vec![v], done: false })
                        .unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(shared.len(), 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // no torn transitions: every field carries the same value
    for t in shared.sample(500, &mut rng) {
        assert!(t.s[0] == t.r && t.a[0] == t.r && t.s_next[0] == t.r);
    }
}

#[test]
fn checkpoint_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut a = Agent::new(3, 2, small_cfg(), 1).unwrap();
    let data: Vec<Transition> = (0..16).map(|_| random_transition(&mut rng, 3, 2, false)).collect();
    let batch: Vec<&Transition> = data.iter().collect();
    a.update(&batch).unwrap();
    let mut bytes = Vec::new();
    a.write_checkpoint(&mut bytes).unwrap();
    let mut b = Agent::new(3, 2, small_cfg(), 99).unwrap();
    b.read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(a.actor().params(), b.actor().params());
    assert_eq!(a.critic_target().params(), b.critic_target().params());
    assert_eq!(a.temperature(), b.temperature());
    assert_eq!(b.steps(), 1);
    let mut c = Agent::new(4, 2, small_cfg(), 0).unwrap();
    assert!(c.read_checkpoint(bytes.as_slice()).is_err());
}
