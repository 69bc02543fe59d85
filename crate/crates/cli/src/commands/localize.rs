use std::path::Path;

use anyhow::Context;
use entcell::localization::{layer_histogram, load_activation_dump, localize_activations, localize_entity, BaselineStats};
use entcell::organism::GroundTruth;
use entcell::pipeline::baseline_stats;
use entcell::{CellMap, NeuronId, RankedCell};
use rayon::prelude::*;
use serde::Serialize;

use super::{fraction, load_lab};
use crate::config::ExperimentConfig;
use crate::manifest::Run;
use crate::svg::{BarChart, Series};

#[derive(Serialize)]
struct CellRow<'a> {
    entity_id: &'a str,
    rank: usize,
    layer: usize,
    neuron: usize,
    score: f64,
}

#[derive(Serialize)]
struct RecoveryRow<'a> {
    entity_id: &'a str,
    top_layer: usize,
    top_neuron: usize,
    planted_layer: usize,
    planted_neuron: usize,
    recovered: bool,
}

#[derive(Serialize)]
struct HistogramRow {
    layer: usize,
    entities: usize,
}

fn write_cell_map(run: &mut Run, map: &CellMap, top_n: usize) -> anyhow::Result<()> {
    let rows: Vec<CellRow> = map
        .entries
        .iter()
        .flat_map(|(id, ranking)| {
            ranking.iter().take(top_n).enumerate().map(move |(i, c)| CellRow {
                entity_id: id,
                rank: i + 1,
                layer: c.cell.layer,
                neuron: c.cell.neuron,
                score: c.score,
            })
        })
        .collect();
    run.write_csv("cell_map.csv", &rows)
}

/// Counts for every layer in `0..num_layers`, zeros included.
fn write_histogram(run: &mut Run, map: &CellMap, num_layers: usize) -> anyhow::Result<()> {
    let counts = layer_histogram(map)?;
    let rows: Vec<HistogramRow> = (0..num_layers)
        .map(|layer| HistogramRow {
            layer,
            entities: counts.get(&layer).copied().unwrap_or(0),
        })
        .collect();
    run.write_csv("layer_histogram.csv", &rows)?;
    let chart = BarChart {
        title: format!("Top-cell layer of {} entities", map.len()),
        y_label: "entities".into(),
        categories: rows.iter().map(|r| r.layer.to_string()).collect(),
        series: vec![Series {
            name: "entities".into(),
            values: rows.iter().map(|r| r.entities as f64).collect(),
        }],
        log_y: false,
    };
    run.write("layer_histogram.svg", chart.to_svg().as_bytes())
}

fn is_planted(truth: &GroundTruth, entity_id: &str, cell: NeuronId) -> bool {
    truth.planted_cells.get(entity_id) == Some(&cell)
        || truth.extra_cells.get(entity_id).is_some_and(|c| c.contains(&cell))
}

/// Localizes every entity of the inventory against the planted truth.
pub fn run(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let lab = load_lab(config, checkpoint, run)?;
    let scenario = &lab.scenario;
    let stats = baseline_stats(scenario, config.baseline_count, config.epsilon)?;
    let ids = scenario.entity_ids();
    let k = config.prompts_per_entity;
    let results = ids
        .par_iter()
        .map(|&id| {
            let prompts = scenario.canonical_prompts(id, k)?;
            Ok((id, localize_entity(&scenario.organism, &stats, &prompts)?))
        })
        .collect::<entcell::Result<Vec<_>>>()?;

    let mut map = CellMap::default();
    for (id, loc) in &results {
        if config.localization.write_tables {
            let rel = format!("stability/{id}.csv");
            let mut bytes = Vec::new();
            loc.table.write_csv(&mut bytes)?;
            run.write(&rel, &bytes)?;
        }
        map.insert(*id, loc.ranking.clone());
    }
    write_cell_map(run, &map, config.localization.top_n)?;
    write_histogram(run, &map, scenario.organism.num_layers())?;

    let truth = scenario.organism.ground_truth();
    let recovery: Vec<RecoveryRow> = map
        .entries
        .iter()
        .map(|(id, ranking)| {
            let top = ranking[0].cell;
            let planted = truth.planted_cells[id.as_str()];
            RecoveryRow {
                entity_id: id,
                top_layer: top.layer,
                top_neuron: top.neuron,
                planted_layer: planted.layer,
                planted_neuron: planted.neuron,
                recovered: is_planted(truth, id, top),
            }
        })
        .collect();
    run.write_csv("recovery.csv", &recovery)?;

    let recovered = recovery.iter().filter(|r| r.recovered).count();
    let rate = fraction(recovered, recovery.len());
    run.metric("entities", map.len() as f64);
    run.metric("recovered", recovered as f64);
    run.metric("recovery_rate", rate);
    let floor = config.localization.min_recovery;
    run.check("recovery_rate", rate, format!(">= {floor}"), rate >= floor);
    Ok(())
}

/// Localizes one external activation dump against a baseline dump.
pub fn run_dump(config: &ExperimentConfig, dump: &Path, baseline: &Path, run: &mut Run) -> anyhow::Result<()> {
    run.input(dump)?;
    run.input(baseline)?;
    let entity = load_activation_dump(dump).with_context(|| format!("loading {}", dump.display()))?;
    let base = load_activation_dump(baseline).with_context(|| format!("loading {}", baseline.display()))?;
    let base_values = base.to_f64();
    let stats = BaselineStats::from_samples(base_values.outer_iter(), config.epsilon)?;
    let loc = localize_activations(&entity.to_f64(), &stats)?;

    let mut bytes = Vec::new();
    loc.table.write_csv(&mut bytes)?;
    run.write("stability_table.csv", &bytes)?;

    let id = dump
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dump".into());
    let mut map = CellMap::default();
    map.insert(id, loc.ranking.clone());
    write_cell_map(run, &map, config.localization.top_n)?;
    write_histogram(run, &map, stats.dim().0)?;
    let top: RankedCell = loc.top();
    run.metric("prompts", entity.values.shape()[0] as f64);
    run.metric("baseline_prompts", base.values.shape()[0] as f64);
    run.metric("top_layer", top.cell.layer as f64);
    run.metric("top_neuron", top.cell.neuron as f64);
    run.metric("top_score", top.score);
    Ok(())
}
