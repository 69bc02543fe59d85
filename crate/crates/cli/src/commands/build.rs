use std::path::Path;

use entcell::organism::save_checkpoint;
use serde::Serialize;

use super::load_lab;
use crate::config::ExperimentConfig;
use crate::manifest::Run;

#[derive(Serialize)]
struct GroundTruthRow<'a> {
    entity_id: &'a str,
    kind: &'a str,
    layer: usize,
    neuron: usize,
    relation: Option<&'a str>,
}

/// Saves the organism as a checkpoint with its ground truth alongside.
pub fn run(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let lab = load_lab(config, checkpoint, run)?;
    let organism = &lab.scenario.organism;
    save_checkpoint(organism, &run.dir().join("checkpoint"))?;
    run.record("checkpoint/manifest.json")?;
    run.record("checkpoint/tensors.bin")?;

    let truth = organism.ground_truth();
    let mut rows = Vec::new();
    for (id, cell) in &truth.planted_cells {
        rows.push(GroundTruthRow {
            entity_id: id,
            kind: "cell",
            layer: cell.layer,
            neuron: cell.neuron,
            relation: None,
        });
        for extra in truth.extra_cells.get(id).into_iter().flatten() {
            rows.push(GroundTruthRow {
                entity_id: id,
                kind: "extra_cell",
                layer: extra.layer,
                neuron: extra.neuron,
                relation: None,
            });
        }
    }
    for fact in &truth.planted_facts {
        rows.push(GroundTruthRow {
            entity_id: &fact.entity_id,
            kind: "fact",
            layer: fact.neuron.layer,
            neuron: fact.neuron.neuron,
            relation: Some(&fact.relation),
        });
    }
    for d in &truth.distractors {
        rows.push(GroundTruthRow {
            entity_id: &d.entity_id,
            kind: "distractor",
            layer: d.neuron.layer,
            neuron: d.neuron.neuron,
            relation: None,
        });
    }
    run.write_csv("ground_truth.csv", &rows)?;
    run.write_json("ground_truth.json", truth)?;
    run.metric("entities", truth.planted_cells.len() as f64);
    run.metric("planted_facts", truth.planted_facts.len() as f64);
    run.metric("hidden_dim", organism.hidden_dim() as f64);
    run.metric("mlp_width", organism.mlp_width() as f64);
    run.metric("num_layers", organism.num_layers() as f64);
    Ok(())
}
