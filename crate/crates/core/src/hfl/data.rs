use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ModelArch, TaskSpec};

/// Labeled samples held by one user for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub task_id: usize,
    pub input_dim: usize,
    /// Row-major `size x input_dim`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LocalDataset {
    pub fn empty(task_id: usize, input_dim: usize) -> Self {
        Self { task_id, input_dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Fraction of samples carrying each label.
    pub fn class_proportions(&self, classes: usize) -> Vec<f64> {
        let mut p = vec![0.0; classes];
        for &y in &self.labels {
            p[y] += 1.0;
        }
        let n = self.size().max(1) as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub input_dim: usize,
    pub classes: usize,
    /// Dirichlet concentration of each user's class mix; `inf` gives equal
    /// proportions everywhere.
    pub concentration: f64,
    pub samples_min: usize,
    pub samples_max: usize,
    /// Probability that a (user, task) dataset is empty.
    pub empty_fraction: f64,
    pub label_noise: f64,
    /// Class-mean spread range; each task draws its own value, which sets
    /// how hard it is.
    pub separation_min: f64,
    pub separation_max: f64,
    pub test_per_class: usize,
    pub arch: ModelArch,
    pub l2: f64,
    pub bits_per_parameter: f64,
    /// Payload size used for transfer timing in place of
    /// `model_dim * bits_per_parameter`.
    pub model_size_bits: Option<f64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            classes: 4,
            concentration: f64::INFINITY,
            samples_min: 40,
            samples_max: 160,
            empty_fraction: 0.1,
            label_noise: 0.05,
            separation_min: 0.6,
            separation_max: 1.4,
            test_per_class: 100,
            arch: ModelArch::Logistic,
            l2: 1e-3,
            bits_per_parameter: 64.0,
            model_size_bits: None,
        }
    }
}

impl SyntheticConfig {
    pub(crate) fn validate(&self, v: &mut crate::error::Validator) {
        v.check(self.input_dim >= 1, "input_dim", "must be at least 1");
        v.check(self.classes >= 2, "classes", "must be at least 2");
        v.check(
            self.concentration > 0.0 && !self.concentration.is_nan(),
            "concentration",
            format!("must be positive (inf for i.i.d.), got {}", self.concentration),
        );
        v.check(self.samples_min >= 1, "samples_min", "must be at least 1");
        v.check(self.samples_max >= self.samples_min, "samples_max", "must be >= samples_min");
        v.check((0.0..1.0).contains(&self.empty_fraction), "empty_fraction", "must lie in [0, 1)");
        v.check((0.0..=1.0).contains(&self.label_noise), "label_noise", "must lie in [0, 1]");
        v.check(
            self.separation_min >= 0.0 && self.separation_max >= self.separation_min,
            "separation_max",
            "need 0 <= separation_min <= separation_max",
        );
        v.check(self.test_per_class >= 1, "test_per_class", "must be at least 1");
        v.check(self.l2 >= 0.0 && self.l2.is_finite(), "l2", "must be non-negative");
        v.positive(self.bits_per_parameter, "bits_per_parameter");
        if let Some(bits) = self.model_size_bits {
            v.positive(bits, "model_size_bits");
        }
        if let ModelArch::Mlp { hidden } = self.arch {
            v.check(hidden >= 1, "arch.hidden", "must be at least 1");
        }
    }
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn sample_feature<R: Rng + ?Sized>(mean: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    for &m in mean {
        let z: f64 = StandardNormal.sample(rng);
        out.push(m + z);
    }
}

fn noisy_label<R: Rng + ?Sized>(y: usize, classes: usize, noise: f64, rng: &mut R) -> usize {
    if noise > 0.0 && rng.random::<f64>() < noise {
        rng.random_range(0..classes)
    } else {
        y
    }
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut p: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = p.iter().sum();
    if s > 0.0 && s.is_finite() {
        p.iter_mut().for_each(|v| *v /= s);
    } else {
        // every draw underflowed: the limit is a single-class mix
        p.iter_mut().for_each(|v| *v = 0.0);
        p[rng.random_range(0..n)] = 1.0;
    }
    p
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn nearest_mean(x: &[f64], means: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, m) in means.iter().enumerate() {
        let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Builds `tasks` Gaussian-mixture classification problems and their
/// per-user training shards. The result is indexed `[user][task]`.
pub fn gen_synthetic_tasks(
    tasks: usize,
    users: usize,
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<(Vec<TaskSpec>, Vec<Vec<LocalDataset>>)> {
    if tasks == 0 {
        return Err(Error::invalid("tasks", "need at least one task"));
    }
    if users == 0 {
        return Err(Error::invalid("users", "need at least one user"));
    }
    let mut v = crate::error::Validator::new("synthetic");
    cfg.validate(&mut v);
    v.finish()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, c) = (cfg.input_dim, cfg.classes);

    // which (user, task) shards are populated
    let mut present = vec![vec![true; tasks]; users];
    for row in present.iter_mut() {
        for p in row.iter_mut() {
            *p = rng.random::<f64>() >= cfg.empty_fraction;
        }
        if !row.iter().any(|&p| p) {
            let f = rng.random_range(0..tasks);
            row[f] = true;
        }
    }
    for f in 0..tasks {
        if !present.iter().any(|row| row[f]) {
            let k = rng.random_range(0..users);
            present[k][f] = true;
        }
    }

    let mut specs = Vec::with_capacity(tasks);
    let mut shards: Vec<Vec<LocalDataset>> = (0..users).map(|_| Vec::with_capacity(tasks)).collect();
    for f in 0..tasks {
        let sep = if cfg.separation_max > cfg.separation_min {
            rng.random_range(cfg.separation_min..cfg.separation_max)
        } else {
            cfg.separation_min
        };
        let means: Vec<Vec<f64>> =
            (0..c).map(|_| gaussian_vec(d, &mut rng).into_iter().map(|m| m * sep).collect()).collect();

        for (k, shard) in shards.iter_mut().enumerate() {
            if !present[k][f] {
                shard.push(LocalDataset::empty(f, d));
                continue;
            }
            let n = rng.random_range(cfg.samples_min..=cfg.samples_max);
            let mix = if cfg.concentration.is_infinite() { None } else { Some(dirichlet(cfg.concentration, c, &mut rng)) };
            let mut features = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let y = match &mix {
                    None => i % c,
                    Some(p) => categorical(p, &mut rng),
                };
                sample_feature(&means[y], &mut rng, &mut features);
                labels.push(noisy_label(y, c, cfg.label_noise, &mut rng));
            }
            shard.push(LocalDataset { task_id: f, input_dim: d, features, labels });
        }

        let mut test_features = Vec::with_capacity(c * cfg.test_per_class * d);
        let mut test_labels = Vec::with_capacity(c * cfg.test_per_class);
        let mut correct = 0usize;
        for y in 0..c {
            for _ in 0..cfg.test_per_class {
                let start = test_features.len();
                sample_feature(&means[y], &mut rng, &mut test_features);
                let label = noisy_label(y, c, cfg.label_noise, &mut rng);
                if nearest_mean(&test_features[start..], &means) == label {
                    correct += 1;
                }
                test_labels.push(label);
            }
        }
        let model_dim = cfg.arch.param_count(d, c);
        specs.push(TaskSpec {
            task_id: f,
            input_dim: d,
            class_count: c,
            arch: cfg.arch,
            l2: cfg.l2,
            model_dim,
            bits_per_parameter: cfg.bits_per_parameter,
            model_size_bits: cfg.model_size_bits.unwrap_or(model_dim as f64 * cfg.bits_per_parameter),
            reference_accuracy: correct as f64 / test_labels.len() as f64,
            test_features,
            test_labels,
        });
    }
    Ok((specs, shards))
}
