use std::path::Path;

use entcell::pipeline::baseline_stats;
use entcell::robustness::{match_rate, negative_control_probe, robustness_probe, zero_overlap_variants, VariantMatch};
use entcell::{Error, VariantKind};
use rayon::prelude::*;
use serde::Serialize;

use super::load_lab;
use crate::config::ExperimentConfig;
use crate::manifest::Run;
use crate::svg::{BarChart, Series};

#[derive(Serialize)]
struct MatchRow<'a> {
    entity_id: &'a str,
    kind: &'a str,
    form: &'a str,
    top_layer: usize,
    top_neuron: usize,
    canonical_layer: usize,
    canonical_neuron: usize,
    matched: bool,
}

#[derive(Serialize)]
struct RateRow {
    kind: String,
    /// Whether matches are expected: planted variant kinds only.
    expected: bool,
    forms: usize,
    matched: usize,
    rate: Option<f64>,
}

/// Probes for one entity: every planted kind in full, the zero-overlap
/// forms of unplanted kinds, and the never-planted names.
fn probe_entity(
    scenario: &entcell::Scenario,
    stats: &entcell::BaselineStats,
    id: &str,
    planted: &[VariantKind],
    negative_controls: bool,
    k: usize,
) -> entcell::Result<(Vec<VariantMatch>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for kind in VariantKind::ALL {
        if planted.contains(&kind) {
            match robustness_probe(scenario, stats, id, kind, k) {
                Ok(m) => out.extend(m),
                Err(Error::NoVariants { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let unplanted: Vec<(VariantKind, String)> = zero_overlap_variants(scenario.entity(id)?)
        .into_iter()
        .filter(|(kind, _)| !planted.contains(kind))
        .collect();
    for kind in VariantKind::ALL {
        let forms: Vec<String> = unplanted.iter().filter(|(k, _)| *k == kind).map(|(_, f)| f.clone()).collect();
        if !forms.is_empty() {
            let mut m = negative_control_probe(scenario, stats, id, &forms, k)?;
            for row in &mut m {
                row.kind = format!("unplanted-{}", kind.as_str());
            }
            out.extend(m);
        }
    }
    if negative_controls {
        out.extend(negative_control_probe(scenario, stats, id, &scenario.unknown_names, k)?);
    }
    Ok((out, skipped))
}

fn rates(matches: &[VariantMatch], planted: &[VariantKind]) -> Vec<RateRow> {
    let mut kinds: Vec<&str> = matches.iter().map(|m| m.kind.as_str()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|kind| {
            let rows: Vec<VariantMatch> = matches.iter().filter(|m| m.kind == kind).cloned().collect();
            RateRow {
                kind: kind.to_string(),
                expected: planted.iter().any(|p| p.as_str() == kind),
                forms: rows.len(),
                matched: rows.iter().filter(|m| m.matched).count(),
                rate: match_rate(&rows),
            }
        })
        .collect()
}

/// Exact top-cell match rate of surface variants against the canonical name.
pub fn run(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let lab = load_lab(config, checkpoint, run)?;
    let scenario = &lab.scenario;
    let order = scenario.entity_ids();
    let ids: Vec<&str> = order
        .iter()
        .copied()
        .take(config.robustness.max_entities.unwrap_or(order.len()))
        .collect();
    let planted = &config.organism.planted_variants;
    let stats = baseline_stats(scenario, config.baseline_count, config.epsilon)?;
    let per_entity = ids
        .par_iter()
        .map(|&id| {
            probe_entity(
                scenario,
                &stats,
                id,
                planted,
                config.robustness.negative_controls,
                config.prompts_per_entity,
            )
        })
        .collect::<entcell::Result<Vec<_>>>()?;
    let skipped: usize = per_entity.iter().map(|(_, s)| s).sum();
    let matches: Vec<VariantMatch> = per_entity.into_iter().flat_map(|(m, _)| m).collect();

    let rows: Vec<MatchRow> = matches
        .iter()
        .map(|m| MatchRow {
            entity_id: &m.entity_id,
            kind: &m.kind,
            form: &m.form,
            top_layer: m.top.layer,
            top_neuron: m.top.neuron,
            canonical_layer: m.canonical_top.layer,
            canonical_neuron: m.canonical_top.neuron,
            matched: m.matched,
        })
        .collect();
    run.write_csv("robustness.csv", &rows)?;
    let rate_rows = rates(&matches, planted);
    run.write_csv("robustness_rates.csv", &rate_rows)?;
    let chart = BarChart {
        title: "Exact top-cell match rate by surface form".into(),
        y_label: "match rate".into(),
        categories: rate_rows.iter().map(|r| r.kind.clone()).collect(),
        series: vec![Series {
            name: "match rate".into(),
            values: rate_rows.iter().map(|r| r.rate.unwrap_or(0.0)).collect(),
        }],
        log_y: false,
    };
    run.write("robustness.svg", chart.to_svg().as_bytes())?;

    run.metric("entities", ids.len() as f64);
    run.metric("skipped_kinds", skipped as f64);
    for r in &rate_rows {
        let rate = r.rate.unwrap_or(0.0);
        run.metric(&format!("{}_match_rate", r.kind), rate);
        if r.expected {
            run.check(&format!("{}_match_rate", r.kind), rate, "== 1", rate == 1.0);
        } else {
            run.check(&format!("{}_match_rate", r.kind), rate, "== 0", rate == 0.0);
        }
    }
    Ok(())
}
