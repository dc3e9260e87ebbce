use serde::{Deserialize, Serialize};

use super::TaskModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    User(usize),
    Uav(usize),
    Sat(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// User to UAV.
    EdgeUp,
    /// UAV to satellite.
    CloudUp,
    /// Satellite to satellite.
    Isl,
    /// Satellite to UAV.
    CloudDown,
    /// UAV to user.
    EdgeDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferJob {
    pub payload: TaskModel,
    pub bits_remaining: f64,
    pub src: NodeId,
    pub dst: NodeId,
    pub direction: Direction,
}

impl TransferJob {
    pub fn new(payload: TaskModel, bits: f64, src: NodeId, dst: NodeId, direction: Direction) -> Self {
        Self { payload, bits_remaining: bits.max(0.0), src, dst, direction }
    }

    pub fn is_complete(&self) -> bool {
        self.bits_remaining <= 0.0
    }
}

/// Moves every job forward by `rates[i] * dt` bits. Jobs reaching zero are
/// returned first; the rest keep their order in the second list. A job that
/// finishes partway through the slot is still only delivered at its end.
pub fn advance_transfers(jobs: Vec<TransferJob>, rates: &[f64], dt: f64) -> (Vec<TransferJob>, Vec<TransferJob>) {
    assert_eq!(jobs.len(), rates.len(), "one rate per job");
    let mut done = Vec::new();
    let mut pending = Vec::with_capacity(jobs.len());
    for (mut job, &rate) in jobs.into_iter().zip(rates) {
        let rate = if rate.is_finite() && rate > 0.0 { rate } else { 0.0 };
        job.bits_remaining = (job.bits_remaining - rate * dt).max(0.0);
        if job.is_complete() {
            done.push(job);
        } else {
            pending.push(job);
        }
    }
    (done, pending)
}
