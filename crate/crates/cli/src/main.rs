use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sagin_hfl::config::Scenario;
use sagin_hfl::harness::{self, ExperimentSpec, Policy, SweepAxis};
use sagin_hfl::Error;
use serde_json::json;

/// Hierarchical federated learning over a space-air-ground network.
#[derive(Parser)]
#[command(name = "sagin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by the config.
    Run(Common),
    /// Run a comparison policy on the config's scenario and seeds.
    Baseline {
        /// HDSAC_FedAvgWeights, HDSAC_HoveringUav, Random or FixedReward.
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one scenario parameter.
    Sweep {
        /// user_power, task_count_iid, task_count_noniid or elevation.
        axis: String,
        /// Comma-separated sweep points; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        policy: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Mean and population std of final evaluation metrics over seeds.
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file (policy, axis, seeds, schedule, agent, scenario).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario file; replaces the experiment's scenario table.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads for independent (value, seed) runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec, Error> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        if let Some(p) = &self.scenario {
            spec.scenario = Scenario::load(p)?;
        }
        if !self.seeds.is_empty() {
            spec.seeds = self.seeds.clone();
        }
        Ok(spec)
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::UnknownBaseline(_) => "unknown_baseline",
        Error::Io(_) => "io",
        Error::Format(_) => "format",
        Error::InvalidArgument { .. } => "invalid_argument",
        _ => "internal",
    }
}

fn error_line(e: &Error) -> serde_json::Value {
    let mut v = json!({ "error": kind(e), "message": e.to_string() });
    if let Error::Config(c) = e {
        v["fields"] = c.errors.iter().map(|f| json!({ "field": f.field, "message": f.message })).collect();
    }
    v
}

fn print_path(p: &Path) {
    println!("{}", p.display());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(c) => print_path(&harness::run_experiment(&c.spec()?, &c.out_dir, c.jobs)?),
        Command::Baseline { name, common } => {
            print_path(&harness::run_baseline(&name, &common.spec()?, &common.out_dir, common.jobs)?)
        }
        Command::Sweep { axis, values, policy, common } => {
            let mut spec = common.spec()?;
            spec.axis = axis.parse::<SweepAxis>()?;
            if spec.axis == SweepAxis::Time {
                return Err(Error::InvalidArgument { name: "axis", reason: "`time` is not a sweep; use `run`".into() });
            }
            spec.values = values;
            if let Some(p) = policy {
                spec.policy = p.parse::<Policy>()?;
            }
            print_path(&harness::run_experiment(&spec, &common.out_dir, common.jobs)?)
        }
        Command::Summarize { csv, out } => {
            let table = harness::render_table(&harness::emit_summary(&csv)?);
            print!("{table}");
            if let Some(p) = out {
                std::fs::write(p, table)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": "usage", "message": msg.trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
