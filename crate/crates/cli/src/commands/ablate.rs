use std::path::Path;

use entcell::interventions::{trust_filter, AmnesiaCurve, TrustReport};
use entcell::pipeline::{ablate_entity, baseline_stats, control_entities, fluency_prompts, localize_all};
use rayon::prelude::*;
use serde::Serialize;

use super::{fraction, load_lab};
use crate::config::ExperimentConfig;
use crate::manifest::Run;
use crate::svg::{BarChart, Series};

#[derive(Serialize)]
struct CurveRow<'a> {
    entity_id: &'a str,
    layer: usize,
    neuron: usize,
    alpha: f64,
    target: f64,
    min_control: f64,
    fluency_changed: f64,
}

#[derive(Serialize)]
struct ControlRow<'a> {
    entity_id: &'a str,
    control_id: &'a str,
    alpha: f64,
    score: f64,
}

fn curve_rows(curves: &[AmnesiaCurve]) -> Vec<CurveRow<'_>> {
    curves
        .iter()
        .flat_map(|c| {
            c.alphas.iter().enumerate().map(move |(i, &alpha)| CurveRow {
                entity_id: &c.entity_id,
                layer: c.cell.layer,
                neuron: c.cell.neuron,
                alpha,
                target: c.target[i],
                min_control: c.min_control(i),
                fluency_changed: c.fluency_changed[i],
            })
        })
        .collect()
}

fn control_rows(curves: &[AmnesiaCurve]) -> Vec<ControlRow<'_>> {
    let mut rows = Vec::new();
    for c in curves {
        for (control_id, scores) in &c.controls {
            for (&alpha, &score) in c.alphas.iter().zip(scores) {
                rows.push(ControlRow {
                    entity_id: &c.entity_id,
                    control_id,
                    alpha,
                    score,
                });
            }
        }
    }
    rows
}

fn mean_chart(curves: &[AmnesiaCurve], grid: &[f64]) -> BarChart {
    let n = curves.len().max(1) as f64;
    let mean = |f: &dyn Fn(&AmnesiaCurve, usize) -> f64| -> Vec<f64> {
        (0..grid.len()).map(|i| curves.iter().map(|c| f(c, i)).sum::<f64>() / n).collect()
    };
    BarChart {
        title: format!("Mean amnesia score over {} ablated cells", curves.len()),
        y_label: "amnesia score".into(),
        categories: grid.iter().map(|a| format!("{a:.2}")).collect(),
        series: vec![
            Series {
                name: "target".into(),
                values: mean(&|c, i| c.target[i]),
            },
            Series {
                name: "min control".into(),
                values: mean(&|c, i| c.min_control(i)),
            },
        ],
        log_y: false,
    }
}

/// Scales each entity's localized top cell across the grid and filters the
/// cells whose ablation is selective.
pub fn run(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let lab = load_lab(config, checkpoint, run)?;
    let scenario = &lab.scenario;
    let section = &config.ablation;
    let grid = section.grid()?;
    let order = scenario.entity_ids();
    let targets: Vec<&str> = order
        .iter()
        .copied()
        .take(section.max_entities.unwrap_or(order.len()))
        .collect();

    let stats = baseline_stats(scenario, config.baseline_count, config.epsilon)?;
    let cells = localize_all(scenario, &stats, &targets, config.prompts_per_entity)?;
    let fluency = fluency_prompts(scenario, section.fluency_prompts)?;
    let curves = targets
        .par_iter()
        .map(|&id| {
            let controls = control_entities(&order, id, section.controls)?;
            let cell = cells.top(id).expect("localized").cell;
            ablate_entity(scenario, id, cell, &controls, &grid, &fluency)
        })
        .collect::<entcell::Result<Vec<_>>>()?;
    let reports = curves
        .iter()
        .map(|c| trust_filter(c, section.trust))
        .collect::<entcell::Result<Vec<TrustReport>>>()?;

    run.write_csv("amnesia_curves.csv", &curve_rows(&curves))?;
    run.write_csv("amnesia_controls.csv", &control_rows(&curves))?;
    run.write_csv("trust_report.csv", &reports)?;
    run.write_json("trust_report.json", &reports)?;
    run.write("amnesia.svg", mean_chart(&curves, &grid).to_svg().as_bytes())?;

    let trusted = reports.iter().filter(|r| r.trustworthy).count();
    let rate = fraction(trusted, reports.len());
    run.metric("entities", reports.len() as f64);
    run.metric("trusted", trusted as f64);
    run.metric("trusted_rate", rate);
    let floor = section.min_trusted;
    run.check("trusted_rate", rate, format!(">= {floor}"), rate >= floor);
    Ok(())
}
