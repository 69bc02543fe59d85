//! Per-entity experiment drivers shared by the command line and the test
//! suites: localize every entity, ablate a cell against controls, and run
//! the four injection conditions for one QA fact.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{PromptBundle, QaRecord};
use crate::error::{Error, Result};
use crate::interventions::{
    alpha_sweep, amnesia_sweep, estimate_entity_values, injection_success, mean_entity_vectors,
    next_entity, top_k_cells, AmnesiaCurve, AmnesiaProbe, Condition, InjectionSpec, MeanEntity,
    PlaceholderProbe, SuccessRule,
};
use crate::localization::{collect_baseline_stats, localize_entity, BaselineStats, CellMap};
use crate::metrics::{top_k, EvalOutcome};
use crate::organism::{NeuronId, TokenId};
use crate::scenario::Scenario;
use crate::steering::{SteeringProblem, SteeringSpec};

pub fn baseline_stats(scenario: &Scenario, count: usize, epsilon: f64) -> Result<BaselineStats> {
    collect_baseline_stats(&scenario.organism, &scenario.baseline_prompts(count)?, epsilon)
}

/// Full rankings for `entity_ids` from `k` canonical prompts each.
pub fn localize_all(scenario: &Scenario, stats: &BaselineStats, entity_ids: &[&str], k: usize) -> Result<CellMap> {
    let rankings = entity_ids
        .par_iter()
        .map(|&id| {
            let prompts = scenario.canonical_prompts(id, k)?;
            Ok((id.to_string(), localize_entity(&scenario.organism, stats, &prompts)?.ranking))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut map = CellMap::default();
    for (id, ranking) in rankings {
        map.insert(id, ranking);
    }
    Ok(map)
}

/// Resolves `spec` against the scenario's vocabulary and entity names.
pub fn steering_problem(scenario: &Scenario, spec: &SteeringSpec) -> Result<SteeringProblem> {
    SteeringProblem::resolve(spec, &scenario.name_tokens(&spec.entity_id)?, &scenario.vocab)
}

/// The `n` entities following `entity_id` in `order`, wrapping around.
pub fn control_entities<'a>(order: &[&'a str], entity_id: &str, n: usize) -> Result<Vec<&'a str>> {
    next_entity(order, entity_id)?;
    let i = order.iter().position(|&e| e == entity_id).expect("checked");
    let n = n.min(order.len() - 1);
    Ok((1..=n).map(|j| order[(i + j) % order.len()]).collect())
}

/// Fact-template probe naming the entity, anchored on the same template
/// naming each never-planted name.
pub fn amnesia_probe(scenario: &Scenario, entity_id: &str) -> Result<AmnesiaProbe> {
    let canonical = scenario.entity(entity_id)?.canonical.clone();
    let (prompt, targets) = scenario.fact_probe(entity_id, &canonical)?;
    let unknown = scenario
        .unknown_names
        .iter()
        .map(|name| Ok(scenario.fact_probe(entity_id, name)?.0))
        .collect::<Result<Vec<_>>>()?;
    AmnesiaProbe::new(&scenario.organism, prompt, &unknown, targets)
}

/// Generic prompts for the fluency check: the first `n` baselines.
pub fn fluency_prompts(scenario: &Scenario, n: usize) -> Result<Vec<Vec<TokenId>>> {
    Ok(scenario.baseline_prompts(n)?.prompts)
}

pub fn ablate_entity(
    scenario: &Scenario,
    entity_id: &str,
    cell: NeuronId,
    controls: &[&str],
    grid: &[f64],
    fluency: &[Vec<TokenId>],
) -> Result<AmnesiaCurve> {
    let target = amnesia_probe(scenario, entity_id)?;
    let control_probes = controls
        .iter()
        .map(|&id| Ok((id, amnesia_probe(scenario, id)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&str, &AmnesiaProbe)> = control_probes.iter().map(|(id, p)| (*id, p)).collect();
    amnesia_sweep(&scenario.organism, (entity_id, &target), &refs, cell, grid, fluency)
}

/// Everything injection needs that is shared across facts.
#[derive(Debug, Clone)]
pub struct InjectionContext {
    pub cells: CellMap,
    /// Mean-entity state at every layer holding some entity's top cell.
    pub means: BTreeMap<usize, MeanEntity>,
    pub prompts_per_entity: usize,
}

impl InjectionContext {
    /// Mean-entity vectors over every localized entity's canonical prompts.
    pub fn new(scenario: &Scenario, cells: CellMap, prompts_per_entity: usize) -> Result<Self> {
        let bundles = cells
            .entries
            .keys()
            .map(|id| scenario.canonical_prompts(id, prompts_per_entity))
            .collect::<Result<Vec<PromptBundle>>>()?;
        let mut layers: Vec<usize> = cells.entries.values().filter_map(|r| r.first()).map(|c| c.cell.layer).collect();
        layers.sort_unstable();
        layers.dedup();
        let means = mean_entity_vectors(&scenario.organism, &bundles, &layers)?;
        Ok(InjectionContext {
            cells,
            means,
            prompts_per_entity,
        })
    }

    /// Injection spec (α = 1) for the `top_k` best cells of `entity_id`.
    pub fn spec(&self, scenario: &Scenario, entity_id: &str, top_k: usize) -> Result<InjectionSpec> {
        let ranking = self
            .cells
            .entries
            .get(entity_id)
            .ok_or_else(|| Error::UnknownEntity(entity_id.to_string()))?;
        let cells = top_k_cells(ranking, top_k)?;
        let layer = cells[0].layer;
        let mean = self
            .means
            .get(&layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no mean-entity state at layer {layer}")))?;
        let prompts = scenario.canonical_prompts(entity_id, self.prompts_per_entity)?;
        let values = estimate_entity_values(&scenario.organism, &prompts, &cells)?;
        InjectionSpec::new(cells, values, mean, 1.0)
    }
}

/// One row of the injection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: Condition,
    pub alpha: Option<f64>,
    pub outcome: EvalOutcome,
}

/// The four injection conditions for one QA fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactInjection {
    pub entity_id: String,
    pub relation: String,
    pub question: String,
    pub top_k: usize,
    pub cells: Vec<NeuronId>,
    pub wrong_entity: String,
    /// The entity-present prompt ranks a correct answer first.
    pub full_top1: bool,
    pub rows: Vec<ConditionRow>,
    pub success: bool,
}

impl FactInjection {
    pub fn row(&self, condition: Condition) -> &ConditionRow {
        self.rows
            .iter()
            .find(|r| r.condition == condition)
            .expect("every condition is recorded")
    }
}

/// Injects `entity_id`'s top cells into the placeholder version of `qa`
/// across `grid`, next to the mean-only and wrong-entity controls. The wrong
/// entity gets its own sweep and reports its best α.
#[allow(clippy::too_many_arguments)]
pub fn inject_fact(
    scenario: &Scenario,
    ctx: &InjectionContext,
    entity_id: &str,
    qa: &QaRecord,
    wrong_entity: &str,
    cells_k: usize,
    grid: &[f64],
    pass_k: usize,
    rule: SuccessRule,
) -> Result<FactInjection> {
    let organism = &scenario.organism;
    let targets = scenario.answer_targets(qa)?;
    let question = scenario.encode(&qa.question)?;
    let probe = PlaceholderProbe::new(
        organism,
        &scenario.vocab,
        &question,
        &scenario.name_tokens(entity_id)?,
        targets.clone(),
        pass_k,
    )?;
    let full = probe.full_outcome()?;
    let full_logits = organism.next_token_logits(&probe.full)?;
    let top1 = top_k(&full_logits, 1)?[0];
    let full_top1 = targets.ids().any(|t| t == top1);

    let spec = ctx.spec(scenario, entity_id, cells_k)?;
    let correct = alpha_sweep(organism, &probe, &spec, grid)?;
    let no_inj = probe.mean_only(organism, &ctx.means[&spec.layer])?;
    let wrong_spec = ctx.spec(scenario, wrong_entity, cells_k)?;
    let wrong = alpha_sweep(organism, &probe, &wrong_spec, grid)?;

    let success = injection_success(
        correct.best_outcome().rel_prob,
        no_inj.rel_prob,
        wrong.best_outcome().rel_prob,
        rule,
    );
    let rows = vec![
        ConditionRow {
            condition: Condition::Full,
            alpha: None,
            outcome: full,
        },
        ConditionRow {
            condition: Condition::NoInj,
            alpha: None,
            outcome: no_inj,
        },
        ConditionRow {
            condition: Condition::Correct,
            alpha: Some(correct.best_alpha()),
            outcome: *correct.best_outcome(),
        },
        ConditionRow {
            condition: Condition::Wrong,
            alpha: Some(wrong.best_alpha()),
            outcome: *wrong.best_outcome(),
        },
    ];
    Ok(FactInjection {
        entity_id: entity_id.to_string(),
        relation: qa.relation.clone(),
        question: qa.question.clone(),
        top_k: cells_k,
        cells: spec.cells,
        wrong_entity: wrong_entity.to_string(),
        full_top1,
        rows,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controls_follow_inventory_order() {
        let order = ["a", "b", "c", "d"];
        assert_eq!(control_entities(&order, "c", 2).unwrap(), vec!["d", "a"]);
        assert_eq!(control_entities(&order, "a", 10).unwrap(), vec!["b", "c", "d"]);
        assert!(control_entities(&order, "a", 0).unwrap().is_empty());
    }
}
