//! Versioned metrics CSV: one row per evaluation point.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Policy, SweepAxis};
use crate::error::{Error, Result};

/// First line of every metrics file.
pub const SCHEMA_HEADER: &str = "# sagin-hfl metrics v1";

/// Column order of the metrics file.
pub const COLUMNS: [&str; 14] = [
    "phase",
    "episode",
    "t",
    "policy",
    "sweep_axis",
    "sweep_value",
    "seed",
    "mean_accuracy",
    "accuracy_spread",
    "mean_loss",
    "reward",
    "episode_return",
    "task_accuracy",
    "task_loss",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// End of a training episode.
    Train,
    /// A slot of a greedy evaluation episode.
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "eval" => Ok(Phase::Eval),
            _ => Err(Error::Format(format!("unknown phase `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub phase: Phase,
    /// Training episodes completed before this point.
    pub episode: usize,
    /// Slots elapsed in the episode.
    pub t: usize,
    pub policy: Policy,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub seed: u64,
    pub mean_accuracy: f64,
    /// Max minus min task accuracy.
    pub accuracy_spread: f64,
    pub mean_loss: f64,
    pub reward: f64,
    pub episode_return: f64,
    pub task_accuracy: Vec<f64>,
    pub task_loss: Vec<f64>,
}

/// Identifies the run a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub policy: Policy,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub seed: u64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn spread(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

impl MetricRow {
    /// Builds a row, deriving the summary columns from the task vectors.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        key: RunKey,
        phase: Phase,
        episode: usize,
        t: usize,
        task_accuracy: Vec<f64>,
        task_loss: Vec<f64>,
        reward: f64,
        episode_return: f64,
    ) -> Self {
        Self {
            phase,
            episode,
            t,
            policy: key.policy,
            sweep_axis: key.sweep_axis,
            sweep_value: key.sweep_value,
            seed: key.seed,
            mean_accuracy: mean(&task_accuracy),
            accuracy_spread: spread(&task_accuracy),
            mean_loss: mean(&task_loss),
            reward,
            episode_return,
            task_accuracy,
            task_loss,
        }
    }

    pub fn key(&self) -> RunKey {
        RunKey { policy: self.policy, sweep_axis: self.sweep_axis, sweep_value: self.sweep_value, seed: self.seed }
    }

    /// Checks the row's internal consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.task_accuracy.is_empty() || self.task_accuracy.len() != self.task_loss.len() {
            return bad(format!(
                "task_accuracy and task_loss need equal non-zero lengths ({} vs {})",
                self.task_accuracy.len(),
                self.task_loss.len()
            ));
        }
        if self.task_accuracy.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("task accuracy outside [0, 1]".into());
        }
        if self.task_loss.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("task loss must be finite and non-negative".into());
        }
        for (name, x) in [("sweep_value", self.sweep_value), ("reward", self.reward), ("episode_return", self.episode_return)] {
            if !x.is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        let tol = 1e-9;
        if (self.mean_accuracy - mean(&self.task_accuracy)).abs() > tol {
            return bad("mean_accuracy disagrees with task_accuracy".into());
        }
        if (self.accuracy_spread - spread(&self.task_accuracy)).abs() > tol {
            return bad("accuracy_spread disagrees with task_accuracy".into());
        }
        if (self.mean_loss - mean(&self.task_loss)).abs() > tol * self.mean_loss.abs().max(1.0) {
            return bad("mean_loss disagrees with task_loss".into());
        }
        if self.phase == Phase::Eval && self.t == 0 {
            return bad("evaluation rows start at t = 1".into());
        }
        Ok(())
    }

    fn fields(&self) -> [String; 14] {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        [
            self.phase.as_str().to_string(),
            self.episode.to_string(),
            self.t.to_string(),
            self.policy.name().to_string(),
            self.sweep_axis.name().to_string(),
            self.sweep_value.to_string(),
            self.seed.to_string(),
            self.mean_accuracy.to_string(),
            self.accuracy_spread.to_string(),
            self.mean_loss.to_string(),
            self.reward.to_string(),
            self.episode_return.to_string(),
            join(&self.task_accuracy),
            join(&self.task_loss),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != COLUMNS.len() {
            return Err(Error::Format(format!("expected {} columns, got {}", COLUMNS.len(), rec.len())));
        }
        fn num<T: FromStr>(s: &str, col: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Format(format!("column `{col}`: cannot parse `{s}`")))
        }
        let list = |s: &str, col: &str| -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(';').map(|x| num::<f64>(x, col)).collect()
        };
        let row = Self {
            phase: rec[0].parse()?,
            episode: num(&rec[1], COLUMNS[1])?,
            t: num(&rec[2], COLUMNS[2])?,
            policy: rec[3].parse().map_err(|_| Error::Format(format!("unknown policy `{}`", &rec[3])))?,
            sweep_axis: rec[4].parse()?,
            sweep_value: num(&rec[5], COLUMNS[5])?,
            seed: num(&rec[6], COLUMNS[6])?,
            mean_accuracy: num(&rec[7], COLUMNS[7])?,
            accuracy_spread: num(&rec[8], COLUMNS[8])?,
            mean_loss: num(&rec[9], COLUMNS[9])?,
            reward: num(&rec[10], COLUMNS[10])?,
            episode_return: num(&rec[11], COLUMNS[11])?,
            task_accuracy: list(&rec[12], COLUMNS[12])?,
            task_loss: list(&rec[13], COLUMNS[13])?,
        };
        row.validate()?;
        Ok(row)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes the schema line, the column header and every row.
pub fn write_rows<W: Write>(mut w: W, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "{SCHEMA_HEADER}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS).map_err(csv_error)?;
    for row in rows {
        row.validate()?;
        out.write_record(row.fields()).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses and validates a metrics file.
pub fn read_rows<R: BufRead>(mut r: R) -> Result<Vec<MetricRow>> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_HEADER {
        return Err(Error::Format(format!("missing schema line `{SCHEMA_HEADER}`")));
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rd.headers().map_err(csv_error)?;
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Format(format!("unexpected columns: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        rows.push(MetricRow::from_record(&rec).map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?);
    }
    Ok(rows)
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<MetricRow>> {
    let f = std::fs::File::open(path)?;
    read_rows(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
