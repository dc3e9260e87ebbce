//! Final-slot statistics across seeds.

use std::fmt::Write as _;

use super::metrics::{MetricRow, Phase};
use super::{Policy, SweepAxis};
use crate::error::{Error, Result};

/// Mean and population standard deviation (divide by `n`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: Policy,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub seeds: usize,
    pub mean_accuracy: Stat,
    pub accuracy_spread: Stat,
    pub mean_loss: Stat,
    pub episode_return: Stat,
    /// Per task, in task order.
    pub task_accuracy: Vec<Stat>,
}

/// The last evaluation row of every run, in first-seen run order.
pub fn final_rows(rows: &[MetricRow]) -> Vec<&MetricRow> {
    let mut out: Vec<&MetricRow> = Vec::new();
    for row in rows.iter().filter(|r| r.phase == Phase::Eval) {
        match out.iter_mut().find(|r| r.key() == row.key()) {
            Some(slot) => {
                if (row.episode, row.t) >= (slot.episode, slot.t) {
                    *slot = row;
                }
            }
            None => out.push(row),
        }
    }
    out
}

/// Groups final rows by policy, axis and sweep value, sorted by those keys.
pub fn summarize(rows: &[MetricRow]) -> Result<Vec<SummaryRow>> {
    let finals = final_rows(rows);
    if finals.is_empty() {
        return Err(Error::Format("no evaluation rows to summarize".into()));
    }
    let mut groups: Vec<(Policy, SweepAxis, f64, Vec<&MetricRow>)> = Vec::new();
    for r in finals {
        match groups.iter_mut().find(|g| g.0 == r.policy && g.1 == r.sweep_axis && g.2 == r.sweep_value) {
            Some(g) => g.3.push(r),
            None => groups.push((r.policy, r.sweep_axis, r.sweep_value, vec![r])),
        }
    }
    groups.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    groups
        .into_iter()
        .map(|(policy, sweep_axis, sweep_value, rs)| {
            let tasks = rs[0].task_accuracy.len();
            if rs.iter().any(|r| r.task_accuracy.len() != tasks) {
                return Err(Error::Format(format!(
                    "{} {} {}: runs disagree on the task count",
                    policy.name(),
                    sweep_axis.name(),
                    sweep_value
                )));
            }
            let col = |f: &dyn Fn(&MetricRow) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Ok(SummaryRow {
                policy,
                sweep_axis,
                sweep_value,
                seeds: rs.len(),
                mean_accuracy: col(&|r| r.mean_accuracy),
                accuracy_spread: col(&|r| r.accuracy_spread),
                mean_loss: col(&|r| r.mean_loss),
                episode_return: col(&|r| r.episode_return),
                task_accuracy: (0..tasks).map(|i| col(&|r| r.task_accuracy[i])).collect(),
            })
        })
        .collect()
}

/// Fixed-width text table, one line per group.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:<18} {:>8} {:>5}  {:>17}  {:>17}  {:>17}  {:>19}",
        "policy", "sweep_axis", "value", "seeds", "mean_accuracy", "accuracy_spread", "mean_loss", "episode_return"
    );
    let pm = |st: Stat| format!("{:.4} ± {:.4}", st.mean, st.std);
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:<18} {:>8} {:>5}  {:>17}  {:>17}  {:>17}  {:>19}",
            r.policy.name(),
            r.sweep_axis.name(),
            r.sweep_value,
            r.seeds,
            pm(r.mean_accuracy),
            pm(r.accuracy_spread),
            pm(r.mean_loss),
            format!("{:.3} ± {:.3}", r.episode_return.mean, r.episode_return.std),
        );
    }
    s
}
