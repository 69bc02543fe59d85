mod ablate;
mod build;
mod inject;
mod localize;
mod report;
mod robustness;
mod steer;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use entcell::corpus::{load_inventory, toy_inventory};
use entcell::organism::{load_checkpoint, MANIFEST_FILE as CHECKPOINT_MANIFEST, TENSORS_FILE};
use entcell::steering::SteeringSpec;
use entcell::{Inventory, Scenario};

use crate::config::ExperimentConfig;
use crate::manifest::{Invocation, Run, RunManifest};

/// Built-in steering problem: move one entity's spouse answer.
pub const DEFAULT_STEERING_PROBLEM: &str = include_str!("../../../../data/steering_obama.json");

/// How a run was requested; enough to replay it.
#[derive(Debug, Clone)]
pub struct Request {
    pub invocation: Invocation,
    pub config: ExperimentConfig,
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub check: bool,
    pub checkpoint: Option<PathBuf>,
}

/// The planted organism with its inventory and steering problem.
pub struct Lab {
    pub scenario: Scenario,
    pub steering: SteeringSpec,
}

fn load_inventory_for(config: &ExperimentConfig, run: &mut Run) -> anyhow::Result<Inventory> {
    let inventory = match &config.inventory {
        Some(path) => {
            run.input(path)?;
            load_inventory(path)?
        }
        None => toy_inventory(),
    };
    Ok(match config.entity_limit {
        Some(n) => inventory.take(n),
        None => inventory,
    })
}

fn load_steering_spec(config: &ExperimentConfig, run: &mut Run) -> anyhow::Result<SteeringSpec> {
    let text = match &config.steering.problem {
        Some(path) => {
            run.input(path)?;
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => DEFAULT_STEERING_PROBLEM.to_string(),
    };
    Ok(SteeringSpec::from_json(&text)?)
}

/// Builds (or loads) the organism for `config` and records its inputs.
pub fn load_lab(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<Lab> {
    let inventory = load_inventory_for(config, run)?;
    let steering = load_steering_spec(config, run)?;
    let texts = steering.texts();
    let scenario = match checkpoint {
        Some(dir) => {
            run.input(&dir.join(CHECKPOINT_MANIFEST))?;
            run.input(&dir.join(TENSORS_FILE))?;
            let organism = load_checkpoint(dir)?;
            Scenario::from_organism(inventory, config.scenario(), organism, &texts)?
        }
        None => Scenario::build(inventory, config.scenario(), &texts)?,
    };
    run.set_fingerprint(scenario.organism.fingerprint());
    Ok(Lab { scenario, steering })
}

/// Runs one request to completion. Command failures are recorded in the
/// manifest before being returned.
pub fn execute(request: &Request) -> anyhow::Result<RunManifest> {
    request.config.validate()?;
    let mut run = Run::start(
        &request.out_dir,
        request.invocation.clone(),
        request.check,
        &request.config,
        request.overrides.clone(),
    )?;
    run.set_checkpoint(request.checkpoint.clone());
    eprintln!("{}: writing to {}", request.invocation.name(), request.out_dir.display());
    let config = &request.config;
    let checkpoint = request.checkpoint.as_deref();
    let outcome = match &request.invocation {
        Invocation::Build => build::run(config, checkpoint, &mut run),
        Invocation::Localize { dump, baseline_dump } => match (dump, baseline_dump) {
            (Some(dump), Some(baseline)) => localize::run_dump(config, dump, baseline, &mut run),
            (None, None) => localize::run(config, checkpoint, &mut run),
            _ => Err(crate::ConfigError("--dump and --baseline-dump go together".into()).into()),
        },
        Invocation::Ablate => ablate::run(config, checkpoint, &mut run),
        Invocation::Inject => inject::run(config, checkpoint, &mut run),
        Invocation::Steer => steer::run(config, checkpoint, &mut run),
        Invocation::Robustness => robustness::run(config, checkpoint, &mut run),
        Invocation::Report { runs } => report::run(runs, &mut run),
    };
    match outcome {
        Ok(()) => run.finish(None),
        Err(e) => {
            let message = format!("{e:#}");
            run.finish(Some(message))?;
            Err(e)
        }
    }
}

pub fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
