use std::path::Path;

use entcell::corpus::toy_inventory;
use entcell::organism::PlantGains;
use entcell::pipeline::steering_problem;
use entcell::steering::{initial_delta, optimize_delta, steering_gradient, steering_loss, SteeringSpec};
use entcell::{Scenario, ScenarioConfig, SteeringConfig};

fn spec() -> SteeringSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/steering_obama.json");
    SteeringSpec::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small organism with unit gains, smooth enough for central differences.
fn smooth_scenario(spec: &SteeringSpec) -> Scenario {
    let gains = PlantGains {
        cell_gate_gain: 1.0,
        gather_sharpness: 1.0,
        fact_gain: 1.0,
        detector_gain: 1.0,
        two_cell_fact_gain: 1.0,
        ..PlantGains::default()
    };
    let config = ScenarioConfig {
        token_dims: 24,
        mlp_width: 16,
        noise_scale: 0.5,
        gains,
        ..ScenarioConfig::default()
    };
    Scenario::build(toy_inventory().take(4), config, &spec.texts()).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let spec = spec();
    let scenario = smooth_scenario(&spec);
    let organism = &scenario.organism;
    let problem = steering_problem(&scenario, &spec).unwrap();
    let config = SteeringConfig {
        layer: organism.ground_truth().planted_cells["Q76"].layer,
        ..SteeringConfig::default()
    };
    let h = 1e-3;
    for case in 0..3 {
        let delta: Vec<f64> = initial_delta(organism.hidden_dim(), case).iter().map(|x| x - 0.5).collect();
        let (_, grad) = steering_gradient(organism, &problem, &delta, &config).unwrap();
        for i in 0..delta.len() {
            if grad[i].abs() < 1e-8 {
                continue;
            }
            let mut plus = delta.clone();
            plus[i] += h;
            let mut minus = delta.clone();
            minus[i] -= h;
            let fd = (steering_loss(organism, &problem, &plus, &config).unwrap().total
                - steering_loss(organism, &problem, &minus, &config).unwrap().total)
                / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs());
            assert!(rel < 1e-4, "case {case} component {i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn steering_rewrites_spouse_and_spares_other_facts() {
    let spec = spec();
    let scenario = Scenario::build(toy_inventory().take(40), ScenarioConfig::default(), &spec.texts()).unwrap();
    let problem = steering_problem(&scenario, &spec).unwrap();
    let config = SteeringConfig {
        layer: scenario.organism.ground_truth().planted_cells["Q76"].layer,
        ..SteeringConfig::default()
    };
    let result = optimize_delta(&scenario.organism, &problem, &config).unwrap();
    assert_eq!(result.trajectory.len(), config.steps);
    assert!(result.trajectory.last().unwrap().total < result.trajectory[0].total);
    for a in &result.attack {
        assert!(a.ratio >= 10.0, "{a:?}");
    }
    for p in &result.preserve {
        assert!((0.5..=2.0).contains(&p.ratio), "{p:?}");
    }
}

#[test]
fn zero_learning_rate_leaves_the_start_point() {
    let spec = spec();
    let scenario = smooth_scenario(&spec);
    let problem = steering_problem(&scenario, &spec).unwrap();
    let config = SteeringConfig {
        learning_rate: 0.0,
        steps: 3,
        ..SteeringConfig::default()
    };
    let result = optimize_delta(&scenario.organism, &problem, &config).unwrap();
    assert_eq!(result.delta, initial_delta(scenario.organism.hidden_dim(), config.seed));
    assert_eq!(result.trajectory[0], result.trajectory[2]);
}
