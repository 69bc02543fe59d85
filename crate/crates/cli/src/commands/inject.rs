use std::path::Path;

use entcell::interventions::{next_entity, Condition};
use entcell::pipeline::{baseline_stats, inject_fact, localize_all, FactInjection, InjectionContext};
use rayon::prelude::*;
use serde::Serialize;

use super::{fraction, load_lab};
use crate::config::ExperimentConfig;
use crate::manifest::Run;
use crate::svg::{BarChart, Series};

#[derive(Serialize)]
struct ConditionCsvRow<'a> {
    entity_id: &'a str,
    relation: &'a str,
    cells: usize,
    condition: &'static str,
    alpha: Option<f64>,
    p_ans: f64,
    rel_prob: f64,
    pass_at_k: bool,
}

#[derive(Serialize)]
struct FactRow<'a> {
    entity_id: &'a str,
    relation: &'a str,
    cells: usize,
    injected: String,
    wrong_entity: &'a str,
    full_top1: bool,
    success: bool,
}

#[derive(Serialize)]
struct SummaryRow {
    cells: usize,
    condition: &'static str,
    facts: usize,
    mean_rel_prob: f64,
    pass_rate: f64,
    success_rate: Option<f64>,
}

fn condition_rows(facts: &[FactInjection]) -> Vec<ConditionCsvRow<'_>> {
    facts
        .iter()
        .flat_map(|f| {
            f.rows.iter().map(move |r| ConditionCsvRow {
                entity_id: &f.entity_id,
                relation: &f.relation,
                cells: f.top_k,
                condition: r.condition.as_str(),
                alpha: r.alpha,
                p_ans: r.outcome.p_1,
                rel_prob: r.outcome.rel_prob,
                pass_at_k: r.outcome.pass_1,
            })
        })
        .collect()
}

/// Summary over the facts whose entity-present prompt answers correctly.
fn summarize(facts: &[FactInjection], counts: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &cells in counts {
        let eligible: Vec<&FactInjection> = facts.iter().filter(|f| f.top_k == cells && f.full_top1).collect();
        let n = eligible.len();
        let successes = eligible.iter().filter(|f| f.success).count();
        for condition in Condition::ALL {
            let outcomes = eligible.iter().map(|f| f.row(condition).outcome);
            let (sum, passed) = outcomes.fold((0.0, 0), |(s, p), o| (s + o.rel_prob, p + usize::from(o.pass_1)));
            rows.push(SummaryRow {
                cells,
                condition: condition.as_str(),
                facts: n,
                mean_rel_prob: if n == 0 { 0.0 } else { sum / n as f64 },
                pass_rate: fraction(passed, n),
                success_rate: (condition == Condition::Correct).then(|| fraction(successes, n)),
            });
        }
    }
    rows
}

fn separation_chart(summary: &[SummaryRow], counts: &[usize], k: usize) -> BarChart {
    BarChart {
        title: format!("pass@{k} by injection condition"),
        y_label: format!("pass@{k} rate"),
        categories: Condition::ALL.iter().map(|c| c.as_str().to_string()).collect(),
        series: counts
            .iter()
            .map(|&cells| Series {
                name: format!("top-{cells} cells"),
                values: summary.iter().filter(|r| r.cells == cells).map(|r| r.pass_rate).collect(),
            })
            .collect(),
        log_y: false,
    }
}

/// Injects each entity's localized cells into placeholder versions of its
/// QA prompts, next to the mean-only and wrong-entity controls.
pub fn run(config: &ExperimentConfig, checkpoint: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let lab = load_lab(config, checkpoint, run)?;
    let scenario = &lab.scenario;
    let section = &config.injection;
    let order = scenario.entity_ids();
    let targets: Vec<&str> = order
        .iter()
        .copied()
        .take(section.max_entities.unwrap_or(order.len()))
        .collect();

    let stats = baseline_stats(scenario, config.baseline_count, config.epsilon)?;
    // Wrong-entity cells come from the next entity, so localize one beyond.
    let mut localized = targets.clone();
    for id in &targets {
        let wrong = next_entity(&order, id)?;
        if !localized.contains(&wrong) {
            localized.push(wrong);
        }
    }
    let cells = localize_all(scenario, &stats, &localized, config.prompts_per_entity)?;
    let ctx = InjectionContext::new(scenario, cells, config.prompts_per_entity)?;

    let mut jobs = Vec::new();
    for &id in &targets {
        for qa in &scenario.entity(id)?.qa {
            for &n in &section.cell_counts {
                jobs.push((id, qa, n));
            }
        }
    }
    let facts = jobs
        .par_iter()
        .map(|&(id, qa, n)| {
            let wrong = next_entity(&order, id)?;
            inject_fact(scenario, &ctx, id, qa, wrong, n, &section.alphas, section.k, section.success)
        })
        .collect::<entcell::Result<Vec<_>>>()?;

    run.write_csv("injection.csv", &condition_rows(&facts))?;
    let fact_rows: Vec<FactRow> = facts
        .iter()
        .map(|f| FactRow {
            entity_id: &f.entity_id,
            relation: &f.relation,
            cells: f.top_k,
            injected: f.cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
            wrong_entity: &f.wrong_entity,
            full_top1: f.full_top1,
            success: f.success,
        })
        .collect();
    run.write_csv("facts.csv", &fact_rows)?;
    let summary = summarize(&facts, &section.cell_counts);
    run.write_csv("injection_summary.csv", &summary)?;
    let chart = separation_chart(&summary, &section.cell_counts, section.k);
    run.write("separation.svg", chart.to_svg().as_bytes())?;

    run.metric("facts", (facts.len() / section.cell_counts.len()) as f64);
    for row in &summary {
        let key = format!("top{}_{}", row.cells, row.condition);
        run.metric(&format!("{key}_pass_rate"), row.pass_rate);
        run.metric(&format!("{key}_mean_rel_prob"), row.mean_rel_prob);
        if let Some(rate) = row.success_rate {
            run.metric(&format!("top{}_eligible_facts", row.cells), row.facts as f64);
            run.metric(&format!("top{}_success_rate", row.cells), rate);
            let floor = section.min_success;
            run.check(&format!("top{}_success_rate", row.cells), rate, format!(">= {floor}"), rate >= floor);
        }
    }
    Ok(())
}
