//! Experiment specs, baselines, sweeps and metric emission.

pub mod metrics;
pub mod summary;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{read_file, read_rows, write_rows, MetricRow, Phase, RunKey, COLUMNS, SCHEMA_HEADER};
pub use summary::{final_rows, render_table, summarize, Stat, SummaryRow};

use crate::config::{parse_toml, Scenario, WeightMode};
use crate::derive_seed;
use crate::dsac::Transition;
use crate::env::{Env, RawAction};
use crate::error::{ConfigError, Error, FieldError, Result};
use crate::hybrid::{HybridAgent, HybridConfig, HybridEnv, Learner, Schedule, Trainer};

const TAG_AGENT: u64 = 101;
const TAG_TRAIN: u64 = 102;
const TAG_EVAL: u64 = 103;
const TAG_RANDOM: u64 = 104;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "HDSAC")]
    HDsac,
    #[serde(rename = "HDSAC_FedAvgWeights")]
    HDsacFedAvgWeights,
    #[serde(rename = "HDSAC_HoveringUav")]
    HDsacHoveringUav,
    Random,
    FixedReward,
}

impl Policy {
    pub const ALL: [Policy; 5] =
        [Policy::HDsac, Policy::HDsacFedAvgWeights, Policy::HDsacHoveringUav, Policy::Random, Policy::FixedReward];
    pub const BASELINES: [Policy; 4] =
        [Policy::HDsacFedAvgWeights, Policy::HDsacHoveringUav, Policy::Random, Policy::FixedReward];

    pub fn name(self) -> &'static str {
        match self {
            Policy::HDsac => "HDSAC",
            Policy::HDsacFedAvgWeights => "HDSAC_FedAvgWeights",
            Policy::HDsacHoveringUav => "HDSAC_HoveringUav",
            Policy::Random => "Random",
            Policy::FixedReward => "FixedReward",
        }
    }

    /// Parses one of the four comparison policies.
    pub fn baseline(name: &str) -> Result<Policy> {
        Self::BASELINES.into_iter().find(|p| p.name() == name).ok_or_else(|| Error::UnknownBaseline(name.to_string()))
    }

    pub fn trains(self) -> bool {
        self != Policy::Random
    }

    /// Scenario changes the policy implies.
    pub fn adjust(self, mut scenario: Scenario) -> Scenario {
        match self {
            Policy::HDsacFedAvgWeights => scenario.weight_mode = WeightMode::DatasetProportional,
            Policy::FixedReward => scenario.reward.freeze_alpha = true,
            _ => {}
        }
        scenario
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::UnknownBaseline(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// No sweep; the time axis is the slot index of the evaluation rows.
    Time,
    UserPower,
    TaskCountIid,
    TaskCountNoniid,
    Elevation,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] =
        [SweepAxis::Time, SweepAxis::UserPower, SweepAxis::TaskCountIid, SweepAxis::TaskCountNoniid, SweepAxis::Elevation];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Time => "time",
            SweepAxis::UserPower => "user_power",
            SweepAxis::TaskCountIid => "task_count_iid",
            SweepAxis::TaskCountNoniid => "task_count_noniid",
            SweepAxis::Elevation => "elevation",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Time => vec![0.0],
            SweepAxis::UserPower => vec![0.05, 0.1, 0.2],
            SweepAxis::TaskCountIid | SweepAxis::TaskCountNoniid => vec![2.0, 4.0, 6.0, 8.0],
            SweepAxis::Elevation => vec![30.0, 40.0, 50.0],
        }
    }

    /// The scenario at one sweep point; values outside physical bounds are
    /// rejected.
    pub fn apply(self, base: &Scenario, value: f64, noniid_concentration: f64) -> Result<Scenario> {
        let bad = |msg: String| {
            Err(Error::Config(ConfigError { errors: vec![FieldError { field: format!("sweep.{}", self.name()), message: msg }] }))
        };
        let mut s = base.clone();
        match self {
            SweepAxis::Time => {}
            SweepAxis::UserPower => {
                if !(value > 0.0 && value <= 10.0) {
                    return bad(format!("user power must lie in (0, 10] W, got {value}"));
                }
                s.user_power_w = value;
            }
            SweepAxis::TaskCountIid | SweepAxis::TaskCountNoniid => {
                if !(value >= 1.0 && value <= 16.0 && value.fract() == 0.0) {
                    return bad(format!("task count must be an integer in [1, 16], got {value}"));
                }
                s.tasks = value as usize;
                s.synthetic.concentration =
                    if self == SweepAxis::TaskCountIid { f64::INFINITY } else { noniid_concentration };
            }
            SweepAxis::Elevation => {
                if !(value >= 0.0 && value < 90.0) {
                    return bad(format!("elevation must lie in [0, 90) degrees, got {value}"));
                }
                s.elevation_min_deg = value;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::Format(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub policy: Policy,
    pub axis: SweepAxis,
    /// Sweep points; empty means the axis defaults.
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Class-mix concentration for the non-i.i.d. task-count sweep.
    pub noniid_concentration: f64,
    pub scenario: Scenario,
    pub schedule: Schedule,
    pub agent: HybridConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            policy: Policy::HDsac,
            axis: SweepAxis::Time,
            values: Vec::new(),
            seeds: vec![0, 1, 2, 3, 4],
            noniid_concentration: 0.5,
            scenario: Scenario::default(),
            schedule: Schedule::default(),
            agent: HybridConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn sweep_values(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.axis.default_values()
        } else {
            self.values.clone()
        }
    }

    /// Checks the seeds and every sweep point.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.seeds.is_empty() {
            errors.push(FieldError { field: "seeds".into(), message: "at least one seed is required".into() });
        }
        if !(self.noniid_concentration > 0.0) {
            errors.push(FieldError { field: "noniid_concentration".into(), message: "must be positive".into() });
        }
        if self.axis == SweepAxis::Time && self.sweep_values().len() != 1 {
            errors.push(FieldError { field: "values".into(), message: "the time axis takes a single point".into() });
        }
        for v in self.sweep_values() {
            if let Err(e) = self.axis.apply(&self.scenario, v, self.noniid_concentration) {
                match e {
                    Error::Config(c) => errors.extend(c.errors),
                    other => return Err(other),
                }
            }
        }
        if let Err(e) = self.schedule.validate() {
            errors.push(FieldError { field: "schedule".into(), message: e.to_string() });
        }
        if let Err(e) = self.agent.dsac.validate().and_then(|_| self.agent.budget.validate()) {
            errors.push(FieldError { field: "agent".into(), message: e.to_string() });
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(ConfigError { errors }))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = parse_toml(text, "experiment")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// File stem of the experiment's CSV.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.policy.name(), self.axis.name())
    }
}

/// Wraps an agent; optionally pins the velocity part of every action to zero
/// so that the UAVs hover.
struct PolicyLearner {
    agent: HybridAgent,
    hover_dims: usize,
}

impl Learner for PolicyLearner {
    fn act(&mut self, s: &[f64], explore: bool) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let (d, mut u, mut a) = self.agent.act(s, explore)?;
        for j in 0..self.hover_dims {
            u[j] = 0.0;
            a[j] = 0.0;
        }
        Ok((d, u, a))
    }

    fn learn(&mut self, batch: &[&Transition]) -> Result<()> {
        self.agent.learn(batch)
    }
}

fn split_metrics(env: &Env) -> (Vec<f64>, Vec<f64>) {
    (env.accuracies().to_vec(), env.losses().to_vec())
}

/// One evaluation episode from `seed`, one row per slot.
fn rollout<F>(env: &mut Env, key: RunKey, episode: usize, seed: u64, mut choose: F) -> Result<Vec<MetricRow>>
where
    F: FnMut(&Env, &[f64]) -> Result<RawAction>,
{
    let mut s = Env::reset(env, seed)?.to_vec();
    let mut rows = Vec::new();
    let mut ret = 0.0;
    loop {
        let action = choose(env, &s)?;
        let out = env.step_raw(&action)?;
        ret += out.reward;
        let (acc, loss) = split_metrics(env);
        rows.push(MetricRow::new(key, Phase::Eval, episode, env.t(), acc, loss, out.reward, ret));
        s = out.observation.to_vec();
        if out.done {
            return Ok(rows);
        }
    }
}

fn greedy_rollout(env: &mut Env, learner: &mut PolicyLearner, key: RunKey, episode: usize, seed: u64) -> Result<Vec<MetricRow>> {
    rollout(env, key, episode, seed, |_, s| {
        let (discrete, continuous, _) = learner.act(s, false)?;
        Ok(RawAction { discrete, continuous })
    })
}

/// Trains and evaluates one (sweep value, seed) pair. Tasks and datasets are
/// drawn from `seed`; every policy sees the same evaluation placements for a
/// given seed.
pub fn run_unit(spec: &ExperimentSpec, value: f64, seed: u64) -> Result<Vec<MetricRow>> {
    let scenario = spec.policy.adjust(spec.axis.apply(&spec.scenario, value, spec.noniid_concentration)?);
    let mut env = Env::new(scenario, seed)?;
    let key = RunKey { policy: spec.policy, sweep_axis: spec.axis, sweep_value: value, seed };
    let eval_seed = derive_seed(seed, TAG_EVAL);
    if !spec.policy.trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_RANDOM));
        return rollout(&mut env, key, 0, eval_seed, |env, _| Ok(env.random_action(&mut rng)));
    }
    let agent = HybridAgent::new(
        HybridEnv::obs_dim(&env),
        HybridEnv::discrete_options(&env),
        HybridEnv::continuous_dim(&env),
        spec.agent.clone(),
        derive_seed(seed, TAG_AGENT),
    )?;
    let hover_dims = if spec.policy == Policy::HDsacHoveringUav { env.layout().velocity_len() } else { 0 };
    let mut learner = PolicyLearner { agent, hover_dims };
    let schedule = Schedule { seed: derive_seed(seed, TAG_TRAIN), ..spec.schedule.clone() };
    let mut trainer = Trainer::new(schedule.clone())?;
    let mut rows = Vec::new();
    for ep in 1..=schedule.episodes {
        let mut last_reward = 0.0;
        let log = trainer.run_episode(&mut env, &mut learner, |st| last_reward = st.reward)?;
        let (acc, loss) = split_metrics(&env);
        rows.push(MetricRow::new(key, Phase::Train, ep, log.steps, acc, loss, last_reward, log.episode_return));
        if schedule.eval_every > 0 && ep % schedule.eval_every == 0 && ep < schedule.episodes {
            rows.extend(greedy_rollout(&mut env, &mut learner, key, ep, eval_seed)?);
        }
    }
    rows.extend(greedy_rollout(&mut env, &mut learner, key, schedule.episodes, eval_seed)?);
    Ok(rows)
}

/// Runs every (value, seed) pair on up to `jobs` threads. Rows come back in
/// (value, seed) order whatever the thread count.
pub fn run_units(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<MetricRow>> {
    spec.validate()?;
    let units: Vec<(f64, u64)> =
        spec.sweep_values().into_iter().flat_map(|v| spec.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Mutex<Vec<Option<Result<Vec<MetricRow>>>>> = Mutex::new((0..units.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, units.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= units.len() {
                    break;
                }
                let out = run_unit(spec, units[i].0, units[i].1);
                results.lock().expect("no panics while holding the lock")[i] = Some(out);
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("threads joined") {
        rows.extend(r.expect("every unit ran")?);
    }
    Ok(rows)
}

fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_rows(&mut w, rows)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// Runs the spec and writes `<out_dir>/<policy>_<axis>.csv`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<PathBuf> {
    let rows = run_units(spec, jobs)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{}.csv", spec.stem()));
    write_csv(&path, &rows)?;
    Ok(path)
}

/// Runs a named comparison policy on the template's scenario and seeds.
pub fn run_baseline(name: &str, template: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<PathBuf> {
    let policy = Policy::baseline(name)?;
    run_experiment(&ExperimentSpec { policy, ..template.clone() }, out_dir, jobs)
}

/// Reads every file and summarizes their final evaluation rows together.
pub fn emit_summary(paths: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    if paths.is_empty() {
        return Err(Error::invalid("paths", "need at least one CSV"));
    }
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_file(p)?);
    }
    summarize(&rows)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
