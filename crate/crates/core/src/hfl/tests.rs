use super::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn small_cfg() -> SyntheticConfig {
    SyntheticConfig { input_dim: 2, classes: 3, samples_min: 30, samples_max: 60, ..Default::default() }
}

fn model_with(task_id: usize, params: Vec<f64>) -> TaskModel {
    TaskModel { task_id, params, local_iterations_done: 0, staleness: 0, samples: 1.0 }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SyntheticConfig { concentration: 0.5, ..Default::default() };
    let a = gen_synthetic_tasks(3, 10, &cfg, 9).unwrap();
    let b = gen_synthetic_tasks(3, 10, &cfg, 9).unwrap();
    assert_eq!(a, b);
    let c = gen_synthetic_tasks(3, 10, &cfg, 10).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn default_scale_scenario_builds() {
    let (specs, shards) = gen_synthetic_tasks(10, 10, &SyntheticConfig::default(), 1).unwrap();
    assert_eq!(specs.len(), 10);
    assert_eq!(shards.len(), 10);
    for f in 0..10 {
        assert!(shards.iter().any(|s| !s[f].is_empty()), "task {f} has no data");
    }
    for s in &shards {
        assert_eq!(s.len(), 10);
        assert!(s.iter().any(|d| !d.is_empty()));
    }
    for spec in &specs {
        assert_eq!(spec.model_size_bits, spec.model_dim as f64 * 64.0);
        assert_eq!(spec.test_size(), 400);
    }
}

#[test]
fn empty_shards_occur() {
    let cfg = SyntheticConfig { empty_fraction: 0.5, ..Default::default() };
    let (_, shards) = gen_synthetic_tasks(5, 10, &cfg, 3).unwrap();
    let empties = shards.iter().flatten().filter(|d| d.is_empty()).count();
    assert!(empties > 0);
}

#[test]
fn infinite_concentration_gives_equal_class_mix() {
    let cfg = SyntheticConfig { samples_min: 100, samples_max: 100, empty_fraction: 0.0, ..Default::default() };
    let (_, shards) = gen_synthetic_tasks(2, 6, &cfg, 4).unwrap();
    // labels before noise are cyclic, so the pre-noise mix is exactly uniform;
    // noisy relabelling moves at most a few percent
    for d in shards.iter().flatten() {
        for p in d.class_proportions(4) {
            assert!((p - 0.25).abs() < 0.08, "{p}");
        }
    }
    let clean = SyntheticConfig { label_noise: 0.0, ..cfg };
    let (_, shards) = gen_synthetic_tasks(2, 6, &clean, 4).unwrap();
    for d in shards.iter().flatten() {
        assert_eq!(d.class_proportions(4), vec![0.25; 4]);
    }
}

#[test]
fn small_concentration_skews_class_mix() {
    let cfg = SyntheticConfig { concentration: 0.1, label_noise: 0.0, empty_fraction: 0.0, ..Default::default() };
    let (_, shards) = gen_synthetic_tasks(1, 10, &cfg, 5).unwrap();
    let max_share: f64 = shards.iter().map(|s| s[0].class_proportions(4).into_iter().fold(0.0, f64::max)).sum::<f64>() / 10.0;
    assert!(max_share > 0.6, "{max_share}");
}

#[test]
fn invalid_generation_inputs_rejected() {
    for conc in [0.0, -1.0, f64::NAN] {
        let cfg = SyntheticConfig { concentration: conc, ..Default::default() };
        assert!(gen_synthetic_tasks(1, 1, &cfg, 0).is_err());
    }
    assert!(gen_synthetic_tasks(0, 1, &SyntheticConfig::default(), 0).is_err());
    assert!(gen_synthetic_tasks(1, 0, &SyntheticConfig::default(), 0).is_err());
}

fn first_nonempty(shards: &[Vec<LocalDataset>], task: usize) -> LocalDataset {
    shards.iter().map(|s| s[task].clone()).find(|d| !d.is_empty()).unwrap()
}

#[test]
fn zero_learning_rate_keeps_params() {
    let (specs, shards) = gen_synthetic_tasks(1, 3, &small_cfg(), 2).unwrap();
    let data = first_nonempty(&shards, 0);
    let m = model_with(0, vec![0.3; specs[0].model_dim]);
    let next = local_train_step(&m, &data, &specs[0], 0.0).unwrap();
    assert_eq!(next.params, m.params);
    assert_eq!(next.local_iterations_done, 1);
    assert_eq!(next.samples, data.size() as f64);
}

#[test]
fn empty_or_mismatched_data_rejected() {
    let (specs, _) = gen_synthetic_tasks(2, 3, &small_cfg(), 2).unwrap();
    let m = TaskModel::initial(&specs[0]);
    let empty = LocalDataset::empty(0, 2);
    assert!(matches!(local_train_step(&m, &empty, &specs[0], 0.1), Err(Error::EmptyDataset { .. })));
    let other = LocalDataset { task_id: 1, input_dim: 2, features: vec![0.0, 0.0], labels: vec![0] };
    assert!(matches!(local_train_step(&m, &other, &specs[0], 0.1), Err(Error::TaskMismatch { .. })));
}

#[test]
fn gradient_matches_finite_differences() {
    for arch in [ModelArch::Logistic, ModelArch::Mlp { hidden: 4 }] {
        let cfg = SyntheticConfig { arch, l2: 0.05, ..small_cfg() };
        let (specs, shards) = gen_synthetic_tasks(1, 2, &cfg, 8).unwrap();
        let data = first_nonempty(&shards, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params: Vec<f64> = (0..specs[0].model_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = loss_and_grad(&specs[0], &params, &data.features, &data.labels).unwrap();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let lp = loss_and_grad(&specs[0], &p, &data.features, &data.labels).unwrap().0;
            p[i] -= 2.0 * h;
            let lm = loss_and_grad(&specs[0], &p, &data.features, &data.labels).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(grad[i].abs()).max(1e-2), "{i}: {fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn small_step_strictly_decreases_loss() {
    let (specs, shards) = gen_synthetic_tasks(1, 3, &small_cfg(), 6).unwrap();
    let data = first_nonempty(&shards, 0);
    let mut m = TaskModel::initial(&specs[0]);
    let mut prev = loss_and_grad(&specs[0], &m.params, &data.features, &data.labels).unwrap().0;
    for _ in 0..50 {
        m = local_train_step(&m, &data, &specs[0], 0.1).unwrap();
        let l = loss_and_grad(&specs[0], &m.params, &data.features, &data.labels).unwrap().0;
        assert!(l < prev);
        prev = l;
    }
}

/// Regularized multinomial logistic objective minimized by Newton's method
/// with its own gradient and Hessian code.
fn newton_optimum(data: &LocalDataset, classes: usize, l2: f64) -> Vec<f64> {
    let d = data.input_dim;
    let dim = classes * d + classes;
    let idx_w = |a: usize, j: usize| a * d + j;
    let idx_b = |a: usize| classes * d + a;
    let mut theta = vec![0.0; dim];
    let n = data.size() as f64;
    for _ in 0..50 {
        let mut g = vec![0.0; dim];
        let mut h = vec![vec![0.0; dim]; dim];
        for i in 0..data.size() {
            let x = data.row(i);
            let mut z: Vec<f64> = (0..classes)
                .map(|a| theta[idx_b(a)] + (0..d).map(|j| theta[idx_w(a, j)] * x[j]).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            z.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
            let xt: Vec<f64> = x.iter().cloned().chain([1.0]).collect();
            let slot = |a: usize, j: usize| if j < d { idx_w(a, j) } else { idx_b(a) };
            for a in 0..classes {
                let r = z[a] - if data.labels[i] == a { 1.0 } else { 0.0 };
                for j in 0..=d {
                    g[slot(a, j)] += r * xt[j] / n;
                }
                for b in 0..classes {
                    let c = if a == b { z[a] * (1.0 - z[a]) } else { -z[a] * z[b] };
                    for j in 0..=d {
                        for k in 0..=d {
                            h[slot(a, j)][slot(b, k)] += c * xt[j] * xt[k] / n;
                        }
                    }
                }
            }
        }
        for i in 0..dim {
            g[i] += l2 * theta[i];
            h[i][i] += l2;
        }
        let step = solve(h, g);
        for i in 0..dim {
            theta[i] -= step[i];
        }
    }
    theta
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn repeated_steps_reach_regularized_optimum() {
    let cfg = SyntheticConfig { l2: 0.1, ..small_cfg() };
    let (specs, shards) = gen_synthetic_tasks(1, 2, &cfg, 11).unwrap();
    let data = first_nonempty(&shards, 0);
    let oracle = newton_optimum(&data, 3, 0.1);
    let mut m = TaskModel::initial(&specs[0]);
    for _ in 0..3000 {
        m = local_train_step(&m, &data, &specs[0], 0.5).unwrap();
    }
    let err = m.params.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-4, "max deviation {err}");
}

#[test]
fn random_model_on_binary_task_is_near_chance() {
    let cfg = SyntheticConfig { classes: 2, ..Default::default() };
    let mut accs = Vec::new();
    for seed in 0..400 {
        let (specs, _) = gen_synthetic_tasks(1, 1, &cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let params: Vec<f64> = (0..specs[0].model_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        accs.push(evaluate_task(&model_with(0, params), &specs[0]).unwrap().0);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
}

#[test]
fn trained_model_reaches_reference_accuracy() {
    let cfg = SyntheticConfig { empty_fraction: 0.0, ..Default::default() };
    let (specs, shards) = gen_synthetic_tasks(1, 8, &cfg, 21).unwrap();
    let pooled = LocalDataset {
        task_id: 0,
        input_dim: 8,
        features: shards.iter().flat_map(|s| s[0].features.clone()).collect(),
        labels: shards.iter().flat_map(|s| s[0].labels.clone()).collect(),
    };
    let mut m = TaskModel::initial(&specs[0]);
    for _ in 0..500 {
        m = local_train_step(&m, &pooled, &specs[0], 0.5).unwrap();
    }
    let (acc, loss) = evaluate_task(&m, &specs[0]).unwrap();
    assert!(acc >= specs[0].reference_accuracy - 0.05, "{acc} vs {}", specs[0].reference_accuracy);
    assert!(loss >= 0.0);
}

#[test]
fn vanishing_test_loss_means_perfect_accuracy() {
    let cfg = SyntheticConfig { classes: 2, input_dim: 1, label_noise: 0.0, ..Default::default() };
    let (mut specs, _) = gen_synthetic_tasks(1, 1, &cfg, 0).unwrap();
    // replace the test set with a separable one
    specs[0].test_features = vec![-2.0, -1.0, 1.0, 2.0];
    specs[0].test_labels = vec![0, 0, 1, 1];
    // logits (-s x, s x)
    let (acc, loss) = evaluate_task(&model_with(0, vec![-200.0, 200.0, 0.0, 0.0]), &specs[0]).unwrap();
    assert!(loss < 1e-12);
    assert_eq!(acc, 1.0);
}

#[test]
fn aggregation_identities() {
    let a = model_with(0, vec![1.0, 2.0, 3.0]);
    let out = edge_aggregate(&[&a], &[1.0], AggregationMode::WeightedMean).unwrap();
    assert_eq!(out.params, a.params);
    let out = cloud_aggregate(&[&a, &a, &a], &[0.2, 0.5, 0.3], AggregationMode::WeightedMean).unwrap();
    for (x, y) in out.params.iter().zip(&a.params) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn dataset_proportional_weights_reproduce_fedavg() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sizes = [30.0, 120.0, 50.0, 7.0];
    let models: Vec<TaskModel> =
        sizes.iter().map(|_| model_with(0, (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    let total: f64 = sizes.iter().sum();
    let weights: Vec<f64> = sizes.iter().map(|s| s / total).collect();
    let refs: Vec<&TaskModel> = models.iter().collect();
    let out = edge_aggregate(&refs, &weights, AggregationMode::WeightedMean).unwrap();
    for j in 0..5 {
        let mut num = 0.0;
        for (m, s) in models.iter().zip(sizes) {
            num += s * m.params[j];
        }
        assert!((out.params[j] - num / total).abs() < 1e-12);
    }
}

#[test]
fn final_aggregation_cases() {
    let d1 = model_with(2, vec![1.0, 0.0]);
    let d2 = model_with(2, vec![0.0, 3.0]);
    let r1 = model_with(2, vec![2.0, 3.0]);
    let w = [1.0 / 3.0; 3];
    let out = final_aggregate(&[&d1, &d2], &[&r1], &w, AggregationMode::WeightedMean).unwrap();
    assert!((out.params[0] - 1.0).abs() < 1e-12 && (out.params[1] - 2.0).abs() < 1e-12);
    let only_direct = final_aggregate(&[&d1, &d2], &[], &[0.25, 0.75], AggregationMode::WeightedMean).unwrap();
    let cloud = cloud_aggregate(&[&d1, &d2], &[0.25, 0.75], AggregationMode::WeightedMean).unwrap();
    assert_eq!(only_direct, cloud);
}

#[test]
fn literal_mode_divides_by_member_count() {
    let a = model_with(0, vec![4.0]);
    let b = model_with(0, vec![8.0]);
    let out = edge_aggregate(&[&a, &b], &[0.5, 0.5], AggregationMode::Literal).unwrap();
    assert_eq!(out.params, vec![3.0]);
}

#[test]
fn aggregation_errors() {
    let a = model_with(0, vec![1.0, 2.0]);
    let b = model_with(1, vec![1.0, 2.0]);
    let c = model_with(0, vec![1.0]);
    let wm = AggregationMode::WeightedMean;
    assert!(matches!(edge_aggregate(&[&a, &b], &[0.5, 0.5], wm), Err(Error::TaskMismatch { .. })));
    assert!(matches!(edge_aggregate(&[&a, &c], &[0.5, 0.5], wm), Err(Error::DimensionMismatch { .. })));
    assert!(matches!(edge_aggregate(&[&a, &a], &[0.5, 0.6], wm), Err(Error::NotSimplex { .. })));
    assert!(matches!(edge_aggregate(&[&a, &a], &[1.5, -0.5], wm), Err(Error::NotSimplex { .. })));
    assert!(edge_aggregate(&[], &[], wm).is_err());
}

#[test]
fn three_level_pipeline_equals_flat_fedavg() {
    let (specs, shards) =
        gen_synthetic_tasks(1, 4, &SyntheticConfig { empty_fraction: 0.0, samples_min: 50, samples_max: 50, ..small_cfg() }, 13)
            .unwrap();
    let start = TaskModel::initial(&specs[0]);
    let trained: Vec<TaskModel> =
        shards.iter().map(|s| local_train_step(&start, &s[0], &specs[0], 0.3).unwrap()).collect();
    let wm = AggregationMode::WeightedMean;
    let e0 = edge_aggregate(&[&trained[0], &trained[1]], &[0.5, 0.5], wm).unwrap();
    let e1 = edge_aggregate(&[&trained[2], &trained[3]], &[0.5, 0.5], wm).unwrap();
    let c1 = cloud_aggregate(&[&e1], &[1.0], wm).unwrap();
    let global = final_aggregate(&[&e0], &[&c1], &[0.5, 0.5], wm).unwrap();
    for j in 0..specs[0].model_dim {
        let flat = trained.iter().map(|m| m.params[j]).sum::<f64>() / 4.0;
        assert!((global.params[j] - flat).abs() < 1e-12);
    }
}

#[test]
fn long_random_rounds_stay_finite() {
    let (specs, shards) = gen_synthetic_tasks(1, 5, &SyntheticConfig { empty_fraction: 0.0, ..small_cfg() }, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut models: Vec<TaskModel> = (0..5).map(|_| TaskModel::initial(&specs[0])).collect();
    for _ in 0..10_000 {
        let k = rng.random_range(0..5);
        models[k] = local_train_step(&models[k], &shards[k][0], &specs[0], rng.random_range(0.0..1.0)).unwrap();
        if rng.random::<f64>() < 0.2 {
            let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let refs: Vec<&TaskModel> = models.iter().collect();
            let g = aggregate(&refs, &w, AggregationMode::WeightedMean).unwrap();
            models.iter_mut().for_each(|m| m.params = g.params.clone());
        }
    }
    assert!(models.iter().all(TaskModel::is_finite));
}

#[test]
fn transfer_progress() {
    let m = model_with(0, vec![0.0]);
    let job = TransferJob::new(m.clone(), 1e6, NodeId::User(0), NodeId::Uav(0), Direction::EdgeUp);
    let (done, pending) = advance_transfers(vec![job.clone()], &[0.0], 1.0);
    assert!(done.is_empty());
    assert_eq!(pending[0].bits_remaining, 1e6);
    let (done, pending) = advance_transfers(vec![job], &[1e6], 1.0);
    assert_eq!(done.len(), 1);
    assert!(pending.is_empty());

    let rate = 10e6 * 11f64.log2();
    let mut jobs = vec![TransferJob::new(m, 1.5 * rate, NodeId::User(0), NodeId::Uav(0), Direction::EdgeUp)];
    let mut completed_slot = None;
    for slot in 1..=3 {
        let (done, pending) = advance_transfers(jobs, &[rate], 1.0);
        jobs = pending;
        if !done.is_empty() {
            completed_slot = Some(slot);
            break;
        }
    }
    assert_eq!(completed_slot, Some(2));
}

#[test]
fn checkpoint_roundtrip() {
    let m = TaskModel { task_id: 7, params: vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300], local_iterations_done: 12, staleness: 3, samples: 88.0 };
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    assert_eq!(buf.len(), 4 + 4 + 8 * 5 + 8 * 4);
    assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
    buf[0] = b'X';
    assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Format(_))));
    assert!(read_checkpoint(&buf[..10]).is_err());
}

proptest! {
    #[test]
    fn aggregation_is_permutation_invariant_and_convex(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..6),
        raw in prop::collection::vec(0.01f64..1.0, 6),
        shift in 0usize..6,
    ) {
        let n = rows.len();
        let s: f64 = raw[..n].iter().sum();
        let w: Vec<f64> = raw[..n].iter().map(|x| x / s).collect();
        let models: Vec<TaskModel> = rows.iter().map(|r| model_with(0, r.clone())).collect();
        let refs: Vec<&TaskModel> = models.iter().collect();
        let out = aggregate(&refs, &w, AggregationMode::WeightedMean).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let prefs: Vec<&TaskModel> = perm.iter().map(|&i| &models[i]).collect();
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let pout = aggregate(&prefs, &pw, AggregationMode::WeightedMean).unwrap();
        for j in 0..4 {
            prop_assert!((out.params[j] - pout.params[j]).abs() < 1e-9);
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.params[j] >= lo - 1e-9 && out.params[j] <= hi + 1e-9);
        }
    }
}
