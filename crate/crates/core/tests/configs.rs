use std::path::Path;

use sagin_hfl::config::Scenario;
use sagin_hfl::harness::{ExperimentSpec, Policy, SweepAxis};
use sagin_hfl::hybrid::{HybridConfig, Schedule};

fn shipped(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_scenario_is_the_default() {
    assert_eq!(Scenario::load(&shipped("scenario.toml")).unwrap(), Scenario::default());
}

#[test]
fn shipped_experiment_matches_defaults() {
    let spec = ExperimentSpec::load(&shipped("experiment.toml")).unwrap();
    assert_eq!(spec.policy, Policy::HDsac);
    assert_eq!(spec.axis, SweepAxis::Time);
    assert_eq!(spec.seeds, vec![0, 1, 2, 3, 4]);
    assert_eq!(spec.agent, HybridConfig::default());
    assert_eq!(spec.schedule, Schedule { episodes: 30, update_every: 2, ..Schedule::default() });
    assert_eq!(spec.scenario, Scenario::default());
}
