//! Shared fixtures for the benchmarks in `benches/`.

use entcell::corpus::toy_inventory;
use entcell::pipeline::steering_problem;
use entcell::steering::{SteeringProblem, SteeringSpec};
use entcell::{Scenario, ScenarioConfig};

pub const STEERING_PROBLEM: &str = include_str!("../../../data/steering_obama.json");

/// The default organism over the first `entities` toy entities, with the
/// steering problem's words in its vocabulary.
pub fn scenario(entities: usize) -> (Scenario, SteeringSpec) {
    let spec = SteeringSpec::from_json(STEERING_PROBLEM).expect("bundled steering problem");
    let scenario = Scenario::build(toy_inventory().take(entities), ScenarioConfig::default(), &spec.texts())
        .expect("toy organism builds");
    (scenario, spec)
}

pub fn problem(scenario: &Scenario, spec: &SteeringSpec) -> SteeringProblem {
    steering_problem(scenario, spec).expect("steering problem resolves")
}
