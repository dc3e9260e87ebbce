//! The slot-synchronous decision process: observation, action decoding,
//! one-slot dynamics of the federated pipeline, and the fairness reward.

mod action;
mod reward;

pub use action::{
    check_action, decode_action, join_action, masked_softmax, split_action, ActionLayout, HybridAction, RawAction,
    Violation,
};
pub use reward::{reward, reward_with_alpha, RewardParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    downlink_rate_sat_uav, downlink_rate_uav_user, ground_air_coeff, ground_air_mean_power, isl_rate,
    outdated_csi, sat_uav_coeff, uplink_rate_uav_sat, uplink_rate_user_uav, Emitter, FadingDraw, SPEED_OF_LIGHT,
};
use crate::config::{InterferenceMode, Scenario, WeightMode};
use crate::error::{Error, Result};
use crate::geometry::{
    advance_orbits, distance, move_uav, pass_position, place_constellation, remaining_service_time, CoverageWindow,
    NodeState, UavLimits, Vec3,
};
use crate::hfl::{
    advance_transfers, cloud_aggregate, edge_aggregate, evaluate_task, final_aggregate, gen_synthetic_tasks,
    local_train_step, Direction, LocalDataset, NodeId, TaskModel, TaskSpec, TransferJob,
};

/// Staleness (in global rounds) mapped to 1.0 in the observation.
const STALENESS_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `[user * M + uav]`, log-scaled and mapped into `[0, 1]`.
    pub channel_mags: Vec<f64>,
    /// `[uav * 3 + axis]`, divided by the arena size (altitude by `z_max`).
    pub uav_positions: Vec<f64>,
    /// `[uav * N + sat]`, divided by the full pass time; 0 once expired.
    pub remaining_windows: Vec<f64>,
    /// `[node * F + task]`, UAVs first, then satellites.
    pub node_accuracies: Vec<f64>,
    /// `[user * F + task]`, rounds behind the current global model, scaled.
    pub staleness: Vec<f64>,
    pub global_accuracies: Vec<f64>,
    pub time_fraction: f64,
}

impl Observation {
    pub fn len_for(users: usize, uavs: usize, satellites: usize, tasks: usize) -> usize {
        users * uavs + 3 * uavs + uavs * satellites + (uavs + satellites) * tasks + users * tasks + tasks + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.channel_mags.len()
                + self.uav_positions.len()
                + self.remaining_windows.len()
                + self.node_accuracies.len()
                + self.staleness.len()
                + self.global_accuracies.len()
                + 1,
        );
        v.extend(&self.channel_mags);
        v.extend(&self.uav_positions);
        v.extend(&self.remaining_windows);
        v.extend(&self.node_accuracies);
        v.extend(&self.staleness);
        v.extend(&self.global_accuracies);
        v.push(self.time_fraction);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Slot just simulated.
    pub t: usize,
    pub alpha: f64,
    pub accuracies: Vec<f64>,
    pub losses: Vec<f64>,
    pub global_rounds: Vec<u64>,
    /// UAVs with no visible satellite this slot.
    pub idle_uavs: Vec<bool>,
    pub delivered: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Flight {
    job: TransferJob,
    /// Carries a global model (downlink path) rather than a partial aggregate.
    global: bool,
    /// UAVs to serve once a relayed global model reaches its satellite.
    relay_to: Vec<usize>,
}

/// Simulator state. Tasks and user datasets are fixed at construction;
/// [`Env::reset`] redraws placements, constellation and fading.
#[derive(Debug, Clone)]
pub struct Env {
    scenario: Scenario,
    layout: ActionLayout,
    specs: Vec<TaskSpec>,
    datasets: Vec<Vec<LocalDataset>>,
    arc: f64,
    pass_time: f64,
    noise: f64,
    gain_lo: f64,
    gain_hi: f64,
    rng: ChaCha8Rng,

    t: usize,
    users: Vec<NodeState>,
    uavs: Vec<NodeState>,
    sats: Vec<NodeState>,
    windows: Vec<CoverageWindow>,
    air_gain: Vec<f64>,
    sat_gain: Vec<f64>,
    cluster: Vec<usize>,
    user_models: Vec<Vec<TaskModel>>,
    user_base_round: Vec<Vec<u64>>,
    user_next_task: Vec<usize>,
    uav_fresh: Vec<Vec<Vec<Option<TaskModel>>>>,
    uav_next_task: Vec<usize>,
    sat_edge_fresh: Vec<Vec<Vec<Option<TaskModel>>>>,
    sat_relay_fresh: Vec<Vec<Vec<Option<TaskModel>>>>,
    flights: Vec<Flight>,
    global: Vec<TaskModel>,
    global_round: Vec<u64>,
    accuracy: Vec<f64>,
    loss: Vec<f64>,
    node_acc: Vec<f64>,
    done: bool,
}

impl Env {
    /// Builds tasks and datasets from `data_seed`, then resets with the same
    /// seed.
    pub fn new(scenario: Scenario, data_seed: u64) -> Result<Self> {
        scenario.validate()?;
        let (specs, datasets) = gen_synthetic_tasks(scenario.tasks, scenario.users, &scenario.synthetic, data_seed)?;
        Self::with_tasks(scenario, specs, datasets, data_seed)
    }

    /// Uses caller-provided tasks, indexed `[user][task]`.
    pub fn with_tasks(
        scenario: Scenario,
        specs: Vec<TaskSpec>,
        datasets: Vec<Vec<LocalDataset>>,
        seed: u64,
    ) -> Result<Self> {
        scenario.validate()?;
        if specs.len() != scenario.tasks {
            return Err(Error::DimensionMismatch { expected: scenario.tasks, got: specs.len() });
        }
        if datasets.len() != scenario.users || datasets.iter().any(|d| d.len() != scenario.tasks) {
            return Err(Error::invalid("datasets", "must be indexed [user][task] matching the scenario"));
        }
        let arc = scenario.coverage_arc()?;
        let pass_time = scenario.coverage_time()?;
        let noise = scenario.noise_power();
        let d_min = scenario.uav_z_min_m;
        let d_max = (2.0 * scenario.arena_m * scenario.arena_m + scenario.uav_z_max_m * scenario.uav_z_max_m).sqrt();
        let omega = scenario.rician_factor();
        let gain_hi = ground_air_mean_power(d_min, omega, scenario.tau_los, scenario.tau_nlos).log10() + 1.0;
        let gain_lo = ground_air_mean_power(d_max, omega, scenario.tau_los, scenario.tau_nlos).log10() - 3.0;
        let (k, m, n, f) = (scenario.users, scenario.uavs, scenario.satellites, scenario.tasks);
        let layout = ActionLayout { users: k, uavs: m, satellites: n, tasks: f };
        let mut env = Self {
            scenario,
            layout,
            specs,
            datasets,
            arc,
            pass_time,
            noise,
            gain_lo,
            gain_hi,
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
            users: Vec::new(),
            uavs: Vec::new(),
            sats: Vec::new(),
            windows: Vec::new(),
            air_gain: vec![0.0; k * m],
            sat_gain: vec![0.0; n * m],
            cluster: vec![0; k],
            user_models: Vec::new(),
            user_base_round: vec![vec![0; f]; k],
            user_next_task: vec![0; k],
            uav_fresh: Vec::new(),
            uav_next_task: vec![0; m],
            sat_edge_fresh: Vec::new(),
            sat_relay_fresh: Vec::new(),
            flights: Vec::new(),
            global: Vec::new(),
            global_round: vec![0; f],
            accuracy: vec![0.0; f],
            loss: vec![0.0; f],
            node_acc: vec![0.0; (m + n) * f],
            done: false,
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let sc = &self.scenario;
        let (k, m, n, f) = (sc.users, sc.uavs, sc.satellites, sc.tasks);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arena = sc.arena_m;
        self.users = (0..k)
            .map(|_| NodeState::ground_user(rng.random_range(0.0..arena), rng.random_range(0.0..arena), sc.user_power_w))
            .collect();
        let uav_gain = crate::channel::db_to_linear(sc.uav_gain_db);
        self.uavs = (0..m)
            .map(|_| {
                let p = Vec3::new(rng.random_range(0.0..arena), rng.random_range(0.0..arena), sc.uav_altitude_m);
                NodeState::uav(p, sc.uav_power_w, uav_gain)
            })
            .collect();
        let travelled =
            place_constellation(n, sc.leader_travelled_m, sc.sat_spacing_min_m, sc.sat_spacing_max_m, &mut rng);
        let sat_gain = crate::channel::db_to_linear(sc.sat_gain_db);
        self.sats = travelled
            .iter()
            .map(|&d| NodeState::leo(pass_position(d, self.arc), sc.sat_altitude_m, sc.sat_speed_mps, sc.sat_power_w, sat_gain))
            .collect();
        self.windows = Vec::with_capacity(n * m);
        for (s, &d) in travelled.iter().enumerate() {
            for u in 0..m {
                self.windows.push(CoverageWindow {
                    satellite_id: s,
                    uav_id: u,
                    remaining_time: remaining_service_time(d, self.arc, sc.sat_speed_mps),
                });
            }
        }
        self.cluster = (0..k).map(|_| rng.random_range(0..m)).collect();
        self.user_models = (0..k).map(|_| self.specs.iter().map(TaskModel::initial).collect()).collect();
        self.user_base_round = vec![vec![0; f]; k];
        self.user_next_task = vec![0; k];
        self.uav_fresh = vec![vec![vec![None; k]; f]; m];
        self.uav_next_task = vec![0; m];
        self.sat_edge_fresh = vec![vec![vec![None; m]; f]; n];
        self.sat_relay_fresh = vec![vec![vec![None; n]; f]; n];
        self.flights.clear();
        self.global = self.specs.iter().map(TaskModel::initial).collect();
        self.global_round = vec![0; f];
        for (i, spec) in self.specs.iter().enumerate() {
            let (acc, loss) = evaluate_task(&self.global[i], spec)?;
            self.accuracy[i] = acc;
            self.loss[i] = loss;
        }
        self.node_acc = vec![0.0; (m + n) * f];
        self.t = 0;
        self.done = false;
        self.rng = rng;
        self.sample_channels();
        Ok(self.observe())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn layout(&self) -> ActionLayout {
        self.layout
    }

    pub fn specs(&self) -> &[TaskSpec] {
        &self.specs
    }

    pub fn datasets(&self) -> &[Vec<LocalDataset>] {
        &self.datasets
    }

    pub fn observation_len(&self) -> usize {
        let l = self.layout;
        Observation::len_for(l.users, l.uavs, l.satellites, l.tasks)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracy
    }

    pub fn losses(&self) -> &[f64] {
        &self.loss
    }

    pub fn global_models(&self) -> &[TaskModel] {
        &self.global
    }

    pub fn user_models(&self) -> &[Vec<TaskModel>] {
        &self.user_models
    }

    pub fn user_states(&self) -> &[NodeState] {
        &self.users
    }

    pub fn uav_states(&self) -> &[NodeState] {
        &self.uavs
    }

    pub fn satellite_states(&self) -> &[NodeState] {
        &self.sats
    }

    pub fn windows(&self) -> &[CoverageWindow] {
        &self.windows
    }

    pub fn in_flight(&self) -> usize {
        self.flights.len()
    }

    pub fn pass_time(&self) -> f64 {
        self.pass_time
    }

    fn window(&self, sat: usize, uav: usize) -> &CoverageWindow {
        &self.windows[sat * self.layout.uavs + uav]
    }

    /// Satellites each UAV can currently reach.
    pub fn visible(&self) -> Vec<Vec<usize>> {
        (0..self.layout.uavs)
            .map(|u| (0..self.layout.satellites).filter(|&s| self.window(s, u).is_open()).collect())
            .collect()
    }

    pub fn decode(&self, raw_discrete: &[usize], raw_continuous: &[f64]) -> Result<HybridAction> {
        decode_action(&self.layout, raw_discrete, raw_continuous, &self.visible(), self.scenario.uav_v_max_mps)
    }

    /// A uniformly random raw action: uniform categorical choices, and a
    /// pre-squash continuous vector whose squashed value is uniform on (-1, 1).
    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> RawAction {
        let discrete = self.layout.discrete_options().iter().map(|&o| rng.random_range(0..o)).collect();
        let continuous = (0..self.layout.continuous_len())
            .map(|_| {
                let a: f64 = rng.random_range(-0.999_999..0.999_999);
                a.atanh()
            })
            .collect();
        RawAction { discrete, continuous }
    }

    fn sample_channels(&mut self) {
        let sc = &self.scenario;
        let (m, n) = (sc.uavs, sc.satellites);
        let omega = sc.rician_factor();
        let lambda_g = sc.ground_wavelength();
        for (k, user) in self.users.iter().enumerate() {
            for (u, uav) in self.uavs.iter().enumerate() {
                let d = distance(user, uav).max(1e-3);
                let draw = FadingDraw::sample(omega, d, lambda_g, &mut self.rng);
                let h = ground_air_coeff(d, &draw, sc.tau_los, sc.tau_nlos).expect("positive distance");
                self.air_gain[k * m + u] = h.norm_sqr();
            }
        }
        let lambda_s = sc.space_wavelength();
        let xi = sc.sat_link_gain();
        let doppler = sc.max_doppler();
        for s in 0..n {
            for (u, uav) in self.uavs.iter().enumerate() {
                let d = distance(&self.sats[s], uav).max(1.0);
                let phase = self.rng.random_range(0.0..std::f64::consts::TAU);
                let h_hat = sat_uav_coeff(d, xi, lambda_s, phase).expect("positive distance");
                let delay = sc.csi_delay_s.unwrap_or(d / SPEED_OF_LIGHT);
                self.sat_gain[s * m + u] = outdated_csi(h_hat, doppler, delay, &mut self.rng).norm_sqr();
            }
        }
    }

    pub fn observe(&self) -> Observation {
        let sc = &self.scenario;
        let (k, m, n, f) = (sc.users, sc.uavs, sc.satellites, sc.tasks);
        let span = self.gain_hi - self.gain_lo;
        let channel_mags = self
            .air_gain
            .iter()
            .map(|&g| if g > 0.0 { ((g.log10() - self.gain_lo) / span).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        let mut uav_positions = Vec::with_capacity(3 * m);
        for u in &self.uavs {
            uav_positions.push(u.position.x / sc.arena_m);
            uav_positions.push(u.position.y / sc.arena_m);
            uav_positions.push(u.position.z / sc.uav_z_max_m);
        }
        let mut remaining_windows = Vec::with_capacity(m * n);
        for u in 0..m {
            for s in 0..n {
                remaining_windows.push(self.window(s, u).remaining_time / self.pass_time);
            }
        }
        let mut staleness = Vec::with_capacity(k * f);
        for row in &self.user_base_round {
            for (t, &base) in row.iter().enumerate() {
                staleness.push(((self.global_round[t] - base) as f64 / STALENESS_SCALE).min(1.0));
            }
        }
        Observation {
            channel_mags,
            uav_positions,
            remaining_windows,
            node_accuracies: self.node_acc.clone(),
            staleness,
            global_accuracies: self.accuracy.clone(),
            time_fraction: self.t as f64 / sc.horizon as f64,
        }
    }

    /// Decodes and applies a raw action.
    pub fn step_raw(&mut self, raw: &RawAction) -> Result<StepOutcome> {
        let action = self.decode(&raw.discrete, &raw.continuous)?;
        self.step(&action)
    }

    pub fn step(&mut self, action: &HybridAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Domain("episode already finished; call reset".into()));
        }
        let (k, m, f) = (self.layout.users, self.layout.uavs, self.layout.tasks);
        if action.user_cluster.len() != k
            || action.uav_sat_up.len() != m
            || action.sat_uav_down.len() != m
            || action.uav_velocity.len() != m
            || action.weight_logits_edge.len() != f
            || action.weight_logits_cloud.len() != f
            || action.weight_logits_final.len() != f
        {
            return Err(Error::invalid("action", "shape does not match the scenario"));
        }
        let dt = self.scenario.slot_s;
        self.cluster = action.user_cluster.iter().map(|&c| c.min(m - 1)).collect();

        // transfers that lost their link
        let before = self.flights.len();
        let cluster = self.cluster.clone();
        let windows_open: Vec<bool> = self.windows.iter().map(CoverageWindow::is_open).collect();
        self.flights.retain(|fl| match (fl.job.direction, fl.job.src, fl.job.dst) {
            (Direction::EdgeUp, NodeId::User(u), NodeId::Uav(v)) => cluster[u] == v,
            (Direction::EdgeDown, NodeId::Uav(v), NodeId::User(u)) => cluster[u] == v,
            (Direction::CloudUp, NodeId::Uav(v), NodeId::Sat(s)) | (Direction::CloudDown, NodeId::Sat(s), NodeId::Uav(v)) => {
                windows_open[s * m + v]
            }
            _ => true,
        });
        let mut dropped = before - self.flights.len();

        let rates: Vec<f64> = self.flights.iter().map(|fl| self.rate(&fl.job)).collect();
        let mut arrived = Vec::new();
        let mut pending = Vec::new();
        for (fl, &rate) in std::mem::take(&mut self.flights).into_iter().zip(&rates) {
            let Flight { job, global, relay_to } = fl;
            let (mut d, mut p) = advance_transfers(vec![job], &[rate], dt);
            if let Some(job) = d.pop() {
                arrived.push((job, global, relay_to));
            } else if let Some(job) = p.pop() {
                pending.push(Flight { job, global, relay_to });
            }
        }
        self.flights = pending;
        let delivered = arrived.len();
        for (job, global, relay_to) in arrived {
            dropped += self.deliver(job, global, relay_to, action)?;
        }

        self.final_aggregation(action)?;
        self.cloud_aggregation(action)?;
        self.edge_aggregation(action)?;
        self.local_training()?;

        let limits = UavLimits {
            v_max: self.scenario.uav_v_max_mps,
            z_min: self.scenario.uav_z_min_m,
            z_max: self.scenario.uav_z_max_m,
        };
        let arena = self.scenario.arena_m;
        for (u, v) in self.uavs.iter_mut().zip(&action.uav_velocity) {
            let mut next = move_uav(u, *v, dt, &limits);
            next.position.x = next.position.x.clamp(0.0, arena);
            next.position.y = next.position.y.clamp(0.0, arena);
            *u = next;
        }
        advance_orbits(&mut self.sats, &mut self.windows, dt);

        let slot = self.t;
        let alpha = self.scenario.reward.alpha(slot);
        let r = reward_with_alpha(&self.accuracy, alpha, &self.scenario.reward);
        self.t += 1;
        let all_expired = self.windows.iter().all(|w| !w.is_open());
        self.done = self.t >= self.scenario.horizon || all_expired;
        self.sample_channels();
        Ok(StepOutcome {
            observation: self.observe(),
            reward: r,
            done: self.done,
            info: StepInfo {
                t: slot,
                alpha,
                accuracies: self.accuracy.clone(),
                losses: self.loss.clone(),
                global_rounds: self.global_round.clone(),
                idle_uavs: action.uavs_idle(),
                delivered,
                dropped,
            },
        })
    }

    fn rate(&self, job: &TransferJob) -> f64 {
        let sc = &self.scenario;
        let m = sc.uavs;
        let b = sc.bandwidth_hz;
        let active_up = |dir: Direction| self.flights.iter().filter(move |fl| fl.job.direction == dir);
        let r = match (job.direction, job.src, job.dst) {
            (Direction::EdgeUp, NodeId::User(u), NodeId::Uav(v)) => {
                let target = Emitter { tx_power: sc.user_power_w, coeff_mag_sq: self.air_gain[u * m + v] };
                let interferers: Vec<Emitter> = active_up(Direction::EdgeUp)
                    .filter_map(|fl| match (fl.job.src, fl.job.dst) {
                        (NodeId::User(j), NodeId::Uav(w)) if j != u => match sc.interference {
                            InterferenceMode::AllActive => Some(j),
                            InterferenceMode::SameReceiver if w == v => Some(j),
                            _ => None,
                        },
                        _ => None,
                    })
                    .map(|j| Emitter { tx_power: sc.user_power_w, coeff_mag_sq: self.air_gain[j * m + v] })
                    .collect();
                uplink_rate_user_uav(b, target, &interferers, self.noise)
            }
            (Direction::EdgeDown, NodeId::Uav(v), NodeId::User(u)) => downlink_rate_uav_user(
                b,
                Emitter { tx_power: sc.uav_power_w, coeff_mag_sq: self.air_gain[u * m + v] },
                self.noise,
            ),
            (Direction::CloudUp, NodeId::Uav(v), NodeId::Sat(s)) => {
                let target = Emitter { tx_power: sc.uav_power_w, coeff_mag_sq: self.sat_gain[s * m + v] };
                let interferers: Vec<Emitter> = active_up(Direction::CloudUp)
                    .filter_map(|fl| match (fl.job.src, fl.job.dst) {
                        (NodeId::Uav(i), NodeId::Sat(t)) if i != v => match sc.interference {
                            InterferenceMode::AllActive => Some(i),
                            InterferenceMode::SameReceiver if t == s => Some(i),
                            _ => None,
                        },
                        _ => None,
                    })
                    .map(|i| Emitter { tx_power: sc.uav_power_w, coeff_mag_sq: self.sat_gain[s * m + i] })
                    .collect();
                uplink_rate_uav_sat(b, target, &interferers, self.noise)
            }
            (Direction::CloudDown, NodeId::Sat(s), NodeId::Uav(v)) => downlink_rate_sat_uav(
                b,
                Emitter { tx_power: sc.sat_power_w, coeff_mag_sq: self.sat_gain[s * m + v] },
                self.noise,
            ),
            (Direction::Isl, NodeId::Sat(a), NodeId::Sat(c)) => isl_rate(
                distance(&self.sats[a], &self.sats[c]).max(1.0),
                sc.isl_bandwidth_hz,
                sc.sat_power_w,
                sc.isl_peak_gain,
                sc.isl_carrier_hz,
                sc.noise_temperature_k,
            ),
            _ => Ok(0.0),
        };
        r.unwrap_or(0.0)
    }

    /// Hands a completed transfer to its receiver; returns how many follow-up
    /// transfers had to be discarded.
    fn deliver(&mut self, job: TransferJob, global: bool, relay_to: Vec<usize>, action: &HybridAction) -> Result<usize> {
        let task = job.payload.task_id;
        let mut dropped = 0;
        match (job.direction, job.src, job.dst) {
            (Direction::EdgeUp, NodeId::User(u), NodeId::Uav(v)) => {
                self.uav_fresh[v][task][u] = Some(job.payload);
            }
            (Direction::CloudUp, NodeId::Uav(v), NodeId::Sat(s)) => {
                self.sat_edge_fresh[s][task][v] = Some(job.payload);
            }
            (Direction::Isl, NodeId::Sat(a), NodeId::Sat(c)) => {
                if global {
                    for v in relay_to {
                        if self.window(c, v).is_open() {
                            self.launch(job.payload.clone(), NodeId::Sat(c), NodeId::Uav(v), Direction::CloudDown, true);
                        } else {
                            dropped += 1;
                        }
                    }
                } else if c == action.final_sat {
                    self.sat_relay_fresh[c][task][a] = Some(job.payload);
                } else {
                    dropped += 1;
                }
            }
            (Direction::CloudDown, NodeId::Sat(_), NodeId::Uav(v)) => {
                for u in 0..self.layout.users {
                    if self.cluster[u] == v && !self.datasets[u][task].is_empty() {
                        self.launch(job.payload.clone(), NodeId::Uav(v), NodeId::User(u), Direction::EdgeDown, true);
                    }
                }
            }
            (Direction::EdgeDown, NodeId::Uav(_), NodeId::User(u)) => {
                let round = job.payload.staleness;
                let mut model = job.payload;
                model.staleness = 0;
                model.samples = self.datasets[u][task].size() as f64;
                self.user_models[u][task] = model;
                self.user_base_round[u][task] = round;
            }
            _ => dropped += 1,
        }
        Ok(dropped)
    }

    /// Queues a transfer; a newer global model replaces any older one still
    /// heading to the same receiver.
    fn launch(&mut self, payload: TaskModel, src: NodeId, dst: NodeId, direction: Direction, global: bool) {
        if global {
            let task = payload.task_id;
            self.flights.retain(|fl| !(fl.global && fl.job.dst == dst && fl.job.payload.task_id == task));
        }
        let bits = self.specs[payload.task_id].model_size_bits;
        self.flights.push(Flight { job: TransferJob::new(payload, bits, src, dst, direction), global, relay_to: Vec::new() });
    }

    fn weights_for(&self, models: &[&TaskModel], learned: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        match self.scenario.weight_mode {
            WeightMode::Learned => learned(),
            WeightMode::DatasetProportional => {
                let total: f64 = models.iter().map(|m| m.samples).sum();
                if total > 0.0 {
                    models.iter().map(|m| m.samples / total).collect()
                } else {
                    vec![1.0 / models.len() as f64; models.len()]
                }
            }
        }
    }

    fn record_node_accuracy(&mut self, node: usize, model: &TaskModel) -> Result<(f64, f64)> {
        let task = model.task_id;
        let (acc, loss) = evaluate_task(model, &self.specs[task])?;
        self.node_acc[node * self.layout.tasks + task] = acc;
        Ok((acc, loss))
    }

    fn final_aggregation(&mut self, action: &HybridAction) -> Result<()> {
        let (m, f) = (self.layout.uavs, self.layout.tasks);
        let s = action.final_sat;
        for task in 0..f {
            let direct: Vec<(usize, TaskModel)> = self.sat_edge_fresh[s][task]
                .iter_mut()
                .enumerate()
                .filter_map(|(v, slot)| slot.take().map(|x| (v, x)))
                .collect();
            let relayed: Vec<(usize, TaskModel)> = self.sat_relay_fresh[s][task]
                .iter_mut()
                .enumerate()
                .filter_map(|(j, slot)| slot.take().map(|x| (j, x)))
                .collect();
            if direct.is_empty() && relayed.is_empty() {
                continue;
            }
            let d_refs: Vec<&TaskModel> = direct.iter().map(|(_, x)| x).collect();
            let r_refs: Vec<&TaskModel> = relayed.iter().map(|(_, x)| x).collect();
            let members: Vec<usize> = direct.iter().map(|(v, _)| *v).chain(relayed.iter().map(|(j, _)| m + j)).collect();
            let all: Vec<&TaskModel> = d_refs.iter().chain(&r_refs).copied().collect();
            let w = self.weights_for(&all, || action.final_weights(task, &members));
            let mut global = final_aggregate(&d_refs, &r_refs, &w, self.scenario.aggregation)?;
            self.global_round[task] += 1;
            // a global model's staleness field carries the round it completes
            global.staleness = self.global_round[task];
            let (acc, loss) = self.record_node_accuracy(m + s, &global)?;
            self.accuracy[task] = acc;
            self.loss[task] = loss;
            self.global[task] = global.clone();
            self.dispatch_global(global, s, action);
        }
        // relayed models parked at satellites that are no longer final are stale
        for (sat, per_task) in self.sat_relay_fresh.iter_mut().enumerate() {
            if sat != s {
                per_task.iter_mut().flatten().for_each(|x| *x = None);
            }
        }
        Ok(())
    }

    fn dispatch_global(&mut self, global: TaskModel, from: usize, action: &HybridAction) {
        let mut relays: Vec<(usize, Vec<usize>)> = Vec::new();
        for (v, target) in action.sat_uav_down.iter().enumerate() {
            match target {
                Some(d) if *d == from => {
                    if self.window(from, v).is_open() {
                        self.launch(global.clone(), NodeId::Sat(from), NodeId::Uav(v), Direction::CloudDown, true);
                    }
                }
                Some(d) => match relays.iter_mut().find(|(s, _)| s == d) {
                    Some((_, list)) => list.push(v),
                    None => relays.push((*d, vec![v])),
                },
                None => {}
            }
        }
        for (d, list) in relays {
            self.launch(global.clone(), NodeId::Sat(from), NodeId::Sat(d), Direction::Isl, true);
            if let Some(fl) = self.flights.last_mut() {
                fl.relay_to = list;
            }
        }
    }

    fn cloud_aggregation(&mut self, action: &HybridAction) -> Result<()> {
        let (m, n, f) = (self.layout.uavs, self.layout.satellites, self.layout.tasks);
        for s in 0..n {
            if s == action.final_sat {
                continue;
            }
            for task in 0..f {
                let busy = self.flights.iter().any(|fl| {
                    !fl.global && fl.job.direction == Direction::Isl && fl.job.src == NodeId::Sat(s) && fl.job.payload.task_id == task
                });
                if busy || self.sat_edge_fresh[s][task].iter().all(Option::is_none) {
                    continue;
                }
                let members: Vec<(usize, TaskModel)> = self.sat_edge_fresh[s][task]
                    .iter_mut()
                    .enumerate()
                    .filter_map(|(v, slot)| slot.take().map(|x| (v, x)))
                    .collect();
                let refs: Vec<&TaskModel> = members.iter().map(|(_, x)| x).collect();
                let idx: Vec<usize> = members.iter().map(|(v, _)| *v).collect();
                let w = self.weights_for(&refs, || action.cloud_weights(task, &idx));
                let cloud = cloud_aggregate(&refs, &w, self.scenario.aggregation)?;
                self.record_node_accuracy(m + s, &cloud)?;
                self.launch(cloud, NodeId::Sat(s), NodeId::Sat(action.final_sat), Direction::Isl, false);
            }
        }
        Ok(())
    }

    fn edge_aggregation(&mut self, action: &HybridAction) -> Result<()> {
        let (m, f) = (self.layout.uavs, self.layout.tasks);
        for v in 0..m {
            let Some(sat) = action.uav_sat_up[v] else { continue };
            let busy = self.flights.iter().any(|fl| fl.job.direction == Direction::CloudUp && fl.job.src == NodeId::Uav(v));
            if busy {
                continue;
            }
            let start = self.uav_next_task[v];
            let Some(task) = (0..f).map(|i| (start + i) % f).find(|&t| self.uav_fresh[v][t].iter().any(Option::is_some))
            else {
                continue;
            };
            self.uav_next_task[v] = (task + 1) % f;
            let members: Vec<(usize, TaskModel)> = self.uav_fresh[v][task]
                .iter_mut()
                .enumerate()
                .filter_map(|(u, slot)| slot.take().map(|x| (u, x)))
                .collect();
            let refs: Vec<&TaskModel> = members.iter().map(|(_, x)| x).collect();
            let idx: Vec<usize> = members.iter().map(|(u, _)| *u).collect();
            let w = self.weights_for(&refs, || action.edge_weights(task, &idx));
            let edge = edge_aggregate(&refs, &w, self.scenario.aggregation)?;
            self.record_node_accuracy(v, &edge)?;
            self.launch(edge, NodeId::Uav(v), NodeId::Sat(sat), Direction::CloudUp, false);
        }
        Ok(())
    }

    fn local_training(&mut self) -> Result<()> {
        let (k, f) = (self.layout.users, self.layout.tasks);
        let lr = self.scenario.local_lr;
        for u in 0..k {
            let start = self.user_next_task[u];
            let Some(task) = (0..f).map(|i| (start + i) % f).find(|&t| !self.datasets[u][t].is_empty()) else {
                continue;
            };
            self.user_next_task[u] = (task + 1) % f;
            let next = local_train_step(&self.user_models[u][task], &self.datasets[u][task], &self.specs[task], lr)?;
            self.user_models[u][task] = next;
            let uploading = self.flights.iter().any(|fl| fl.job.direction == Direction::EdgeUp && fl.job.src == NodeId::User(u));
            if !uploading {
                let mut payload = self.user_models[u][task].clone();
                payload.staleness = self.global_round[task] - self.user_base_round[u][task];
                let dst = self.cluster[u];
                self.launch(payload, NodeId::User(u), NodeId::Uav(dst), Direction::EdgeUp, false);
            }
        }
        Ok(())
    }
}
