use std::path::Path;

use entcell::localization::localize_entity;
use entcell::pipeline::{baseline_stats, steering_problem};
use entcell::steering::{optimize_delta, PromptEval};
use entcell::{Error, SteeringResult};
use serde::Serialize;

use super::load_lab;
use crate::config::ExperimentConfig;
use crate::manifest::Run;
use crate::svg::{BarChart, Series};

#[derive(Serialize)]
struct PromptRow<'a> {
    prompt_id: &'a str,
    set: &'static str,
    before: f64,
    after: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    total: f64,
    attack: f64,
    preserve: f64,
    l2: f64,
}

fn write_result(run: &mut Run, result: &SteeringResult) -> anyhow::Result<()> {
    run.write_json("steering_result.json", result)?;
    let steps: Vec<StepRow> = result
        .trajectory
        .iter()
        .enumerate()
        .map(|(step, l)| StepRow {
            step,
            total: l.total,
            attack: l.attack,
            preserve: l.preserve,
            l2: l.l2,
        })
        .collect();
    run.write_csv("trajectory.csv", &steps)
}

fn prompt_rows(result: &SteeringResult) -> Vec<PromptRow<'_>> {
    let attack = result.attack.iter().map(|e| ("attack", e));
    let preserve = result.preserve.iter().map(|e| ("preserve", e));
    attack
        .chain(preserve)
        .map(|(set, e)| PromptRow {
            prompt_id: &e.id,
            set,
            before: e.before,
            after: e.after,
            ratio: e.ratio,
        })
        .collect()
}

fn before_after_chart(result: &SteeringResult, target: &str) -> BarChart {
    let evals: Vec<&PromptEval> = result.attack.iter().chain(&result.preserve).collect();
    BarChart {
        title: format!("Answer probability before and after steering toward {target}"),
        y_label: "probability".into(),
        categories: evals.iter().map(|e| e.id.clone()).collect(),
        series: vec![
            Series {
                name: "before".into(),
                values: evals.iter().map(|e| e.before).collect(),
            },
            Series {
                name: "after".into(),
                values: evals.iter().map(|e| e.after).collect(),
            },
        ],
        log_y: true,
    }
}

/// Optimizes a hidden-state offset that moves the attack prompts to the
/// target answer while holding the preserved facts.
pub fn run(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let lab = load_lab(config, checkpoint, run)?;
    let scenario = &lab.scenario;
    let spec = &lab.steering;
    let layer = match config.steering.layer {
        Some(layer) => layer,
        None => {
            let stats = baseline_stats(scenario, config.baseline_count, config.epsilon)?;
            let prompts = scenario.canonical_prompts(&spec.entity_id, config.prompts_per_entity)?;
            let top = localize_entity(&scenario.organism, &stats, &prompts)?.top();
            run.metric("localized_layer", top.cell.layer as f64);
            top.cell.layer
        }
    };
    let problem = steering_problem(scenario, spec)?;
    let optimizer = config.steering.optimizer(layer, config.seed);
    run.seed("steering", optimizer.seed);
    let result = match optimize_delta(&scenario.organism, &problem, &optimizer) {
        Ok(result) => result,
        Err(Error::Diverged { step, partial }) => {
            write_result(run, &partial)?;
            run.metric("diverged_at_step", step as f64);
            return Err(Error::Diverged { step, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_result(run, &result)?;
    run.write_csv("steering.csv", &prompt_rows(&result))?;
    run.write("steering.svg", before_after_chart(&result, &spec.target).to_svg().as_bytes())?;

    let min_gain = result.attack.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min);
    let lo = result.preserve.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min);
    let hi = result.preserve.iter().map(|e| e.ratio).fold(f64::NEG_INFINITY, f64::max);
    run.metric("layer", layer as f64);
    run.metric("min_attack_gain", min_gain);
    run.metric("min_preserve_ratio", lo);
    run.metric("max_preserve_ratio", hi);
    if let Some(last) = result.trajectory.last() {
        run.metric("final_loss", last.total);
    }
    let s = &config.steering;
    let [band_lo, band_hi] = s.preserve_band;
    run.check(
        "min_attack_gain",
        min_gain,
        format!(">= {}", s.min_attack_gain),
        min_gain >= s.min_attack_gain,
    );
    run.check("min_preserve_ratio", lo, format!(">= {band_lo}"), lo >= band_lo);
    run.check("max_preserve_ratio", hi, format!("<= {band_hi}"), hi <= band_hi);
    Ok(())
}
