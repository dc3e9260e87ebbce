use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Logit magnitude cap applied while decoding.
const LOGIT_CAP: f64 = 50.0;

/// Shape of the hybrid action for a scenario.
///
/// Discrete slots, in order: one cluster choice per user (over UAVs), one
/// uplink satellite per UAV, the final-aggregation satellite, one downlink
/// satellite per UAV. Continuous entries, in order: UAV velocities
/// (`M x 3`), edge logits (`F x K`), cloud logits (`F x M`), final logits
/// (`F x (M + N)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLayout {
    pub users: usize,
    pub uavs: usize,
    pub satellites: usize,
    pub tasks: usize,
}

impl ActionLayout {
    pub fn discrete_len(&self) -> usize {
        self.users + self.uavs + 1 + self.uavs
    }

    /// Number of options of every discrete slot.
    pub fn discrete_options(&self) -> Vec<usize> {
        let mut v = vec![self.uavs; self.users];
        v.extend(std::iter::repeat_n(self.satellites, 2 * self.uavs + 1));
        v
    }

    pub fn velocity_len(&self) -> usize {
        3 * self.uavs
    }

    pub fn continuous_len(&self) -> usize {
        let (k, m, n, f) = (self.users, self.uavs, self.satellites, self.tasks);
        3 * m + f * k + f * m + f * (m + n)
    }

    fn edge_offset(&self) -> usize {
        3 * self.uavs
    }

    fn cloud_offset(&self) -> usize {
        self.edge_offset() + self.tasks * self.users
    }

    fn final_offset(&self) -> usize {
        self.cloud_offset() + self.tasks * self.uavs
    }
}

/// A decoded, feasible joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    /// UAV serving each user.
    pub user_cluster: Vec<usize>,
    /// Uplink satellite per UAV; `None` when no satellite is visible.
    pub uav_sat_up: Vec<Option<usize>>,
    pub final_sat: usize,
    /// Downlink satellite per UAV; `None` when no satellite is visible.
    pub sat_uav_down: Vec<Option<usize>>,
    pub uav_velocity: Vec<Vec3>,
    /// `[task][user]`.
    pub weight_logits_edge: Vec<Vec<f64>>,
    /// `[task][uav]`.
    pub weight_logits_cloud: Vec<Vec<f64>>,
    /// `[task][uav, then satellite]`.
    pub weight_logits_final: Vec<Vec<f64>>,
}

/// Raw action split into its categorical and real parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    pub discrete: Vec<usize>,
    pub continuous: Vec<f64>,
}

/// Lossless partition of a raw action.
pub fn split_action(action: &RawAction) -> (&[usize], &[f64]) {
    (&action.discrete, &action.continuous)
}

pub fn join_action(discrete: &[usize], continuous: &[f64]) -> RawAction {
    RawAction { discrete: discrete.to_vec(), continuous: continuous.to_vec() }
}

fn sanitize(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x
    }
}

fn pick(raw: usize, visible: &[usize]) -> Option<usize> {
    if visible.is_empty() {
        None
    } else if visible.contains(&raw) {
        Some(raw)
    } else {
        Some(visible[raw % visible.len()])
    }
}

/// Maps arbitrary raw vectors onto a feasible action. Out-of-range or masked
/// categorical choices are folded onto the visible options; velocities go
/// through `v_max * tanh` and are then rescaled onto the speed ball.
pub fn decode_action(
    layout: &ActionLayout,
    raw_discrete: &[usize],
    raw_continuous: &[f64],
    visible: &[Vec<usize>],
    v_max: f64,
) -> Result<HybridAction> {
    if raw_discrete.len() != layout.discrete_len() {
        return Err(Error::DimensionMismatch { expected: layout.discrete_len(), got: raw_discrete.len() });
    }
    if raw_continuous.len() != layout.continuous_len() {
        return Err(Error::DimensionMismatch { expected: layout.continuous_len(), got: raw_continuous.len() });
    }
    if visible.len() != layout.uavs {
        return Err(Error::DimensionMismatch { expected: layout.uavs, got: visible.len() });
    }
    let (k, m, n, f) = (layout.users, layout.uavs, layout.satellites, layout.tasks);
    let user_cluster = raw_discrete[..k].iter().map(|&c| c % m).collect();
    let uav_sat_up = (0..m).map(|j| pick(raw_discrete[k + j], &visible[j])).collect();
    let any_visible: Vec<usize> = {
        let mut all: Vec<usize> = visible.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    };
    let final_sat = pick(raw_discrete[k + m], &any_visible).unwrap_or(raw_discrete[k + m] % n);
    let sat_uav_down = (0..m).map(|j| pick(raw_discrete[k + m + 1 + j], &visible[j])).collect();

    let uav_velocity = (0..m)
        .map(|j| {
            let c = &raw_continuous[3 * j..3 * j + 3];
            let v = Vec3::new(sanitize(c[0]).tanh(), sanitize(c[1]).tanh(), sanitize(c[2]).tanh()) * v_max;
            let norm = v.norm();
            if norm > v_max {
                v * (v_max / norm)
            } else {
                v
            }
        })
        .collect();
    let logits = |offset: usize, rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|r| {
                raw_continuous[offset + r * cols..offset + (r + 1) * cols]
                    .iter()
                    .map(|&x| sanitize(x).clamp(-LOGIT_CAP, LOGIT_CAP))
                    .collect()
            })
            .collect()
    };
    Ok(HybridAction {
        user_cluster,
        uav_sat_up,
        final_sat,
        sat_uav_down,
        uav_velocity,
        weight_logits_edge: logits(layout.edge_offset(), f, k),
        weight_logits_cloud: logits(layout.cloud_offset(), f, m),
        weight_logits_final: logits(layout.final_offset(), f, m + n),
    })
}

/// Softmax of `logits` restricted to `members`; the result is aligned with
/// `members`.
pub fn masked_softmax(logits: &[f64], members: &[usize]) -> Vec<f64> {
    if members.is_empty() {
        return Vec::new();
    }
    let max = members.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = members.iter().map(|&i| (logits[i] - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

impl HybridAction {
    /// Idle action: everyone keeps its slot-0 choices, zero velocity,
    /// uniform logits.
    pub fn hover(layout: &ActionLayout, visible: &[Vec<usize>]) -> Self {
        let raw_d = vec![0; layout.discrete_len()];
        let raw_c = vec![0.0; layout.continuous_len()];
        decode_action(layout, &raw_d, &raw_c, visible, 1.0).expect("layout-consistent")
    }

    pub fn edge_weights(&self, task: usize, users: &[usize]) -> Vec<f64> {
        masked_softmax(&self.weight_logits_edge[task], users)
    }

    pub fn cloud_weights(&self, task: usize, uavs: &[usize]) -> Vec<f64> {
        masked_softmax(&self.weight_logits_cloud[task], uavs)
    }

    /// `members` indexes UAVs as `0..M` and satellites as `M + n`.
    pub fn final_weights(&self, task: usize, members: &[usize]) -> Vec<f64> {
        masked_softmax(&self.weight_logits_final[task], members)
    }

    pub fn uavs_idle(&self) -> Vec<bool> {
        self.uav_sat_up.iter().map(Option::is_none).collect()
    }
}

/// One breached feasibility rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

/// Checks cluster membership, satellite pairings against visibility, speed
/// bounds and the simplex property of every weight group over `members`.
pub fn check_action(
    layout: &ActionLayout,
    action: &HybridAction,
    visible: &[Vec<usize>],
    v_max: f64,
    members: &[Vec<usize>],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut fail = |rule: &'static str, detail: String| out.push(Violation { rule, detail });
    if action.user_cluster.len() != layout.users {
        fail("cluster_cover", format!("{} users assigned", action.user_cluster.len()));
    }
    for (k, &c) in action.user_cluster.iter().enumerate() {
        if c >= layout.uavs {
            fail("cluster_unique", format!("user {k} assigned to missing UAV {c}"));
        }
    }
    for (label, pairing) in [("uplink_pairing", &action.uav_sat_up), ("downlink_pairing", &action.sat_uav_down)] {
        if pairing.len() != layout.uavs {
            fail(label, format!("{} pairings for {} UAVs", pairing.len(), layout.uavs));
            continue;
        }
        for (m, p) in pairing.iter().enumerate() {
            match p {
                Some(n) if !visible[m].contains(n) => fail(label, format!("UAV {m} paired with hidden satellite {n}")),
                None if !visible[m].is_empty() => fail(label, format!("UAV {m} idle with satellites visible")),
                _ => {}
            }
        }
    }
    if action.final_sat >= layout.satellites {
        fail("final_sat", format!("satellite {} out of range", action.final_sat));
    }
    for (m, v) in action.uav_velocity.iter().enumerate() {
        if !(v.norm() <= v_max * (1.0 + 1e-12)) {
            fail("speed", format!("UAV {m} speed {}", v.norm()));
        }
    }
    let groups: [(&str, &Vec<Vec<f64>>); 3] = [
        ("edge_weights", &action.weight_logits_edge),
        ("cloud_weights", &action.weight_logits_cloud),
        ("final_weights", &action.weight_logits_final),
    ];
    for (label, logits) in groups {
        for (task, row) in logits.iter().enumerate() {
            for set in members {
                if set.iter().any(|&i| i >= row.len()) {
                    continue;
                }
                let w = masked_softmax(row, set);
                let s: f64 = w.iter().sum();
                if !set.is_empty() && ((s - 1.0).abs() > 1e-9 || w.iter().any(|x| !(*x >= 0.0))) {
                    fail(label, format!("task {task}: weights sum to {s}"));
                }
            }
        }
    }
    out
}
