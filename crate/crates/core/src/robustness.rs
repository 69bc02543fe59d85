//! Surface-form robustness: re-localize an entity through other surface
//! forms in the same templates and compare top cells.

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, EntityRecord, VariantKind};
use crate::error::{Error, Result};
use crate::localization::{localize_entity, BaselineStats};
use crate::organism::NeuronId;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMatch {
    pub entity_id: String,
    /// Variant kind, or `control` for negative-control forms.
    pub kind: String,
    pub form: String,
    pub top: NeuronId,
    pub canonical_top: NeuronId,
    pub matched: bool,
}

/// Top cell of `surface_form` localized in the entity's templates.
pub fn top_cell(scenario: &Scenario, stats: &BaselineStats, entity_id: &str, surface_form: &str, k: usize) -> Result<NeuronId> {
    let prompts = scenario.localization_prompts(entity_id, surface_form, k)?;
    Ok(localize_entity(&scenario.organism, stats, &prompts)?.top().cell)
}

fn probe_forms(
    scenario: &Scenario,
    stats: &BaselineStats,
    entity_id: &str,
    label: &str,
    forms: &[String],
    canonical_top: NeuronId,
    k: usize,
) -> Result<Vec<VariantMatch>> {
    forms
        .iter()
        .map(|form| {
            let top = top_cell(scenario, stats, entity_id, form, k)?;
            Ok(VariantMatch {
                entity_id: entity_id.to_string(),
                kind: label.to_string(),
                form: form.clone(),
                top,
                canonical_top,
                matched: top == canonical_top,
            })
        })
        .collect()
}

/// Match flag for every variant of `kind` against the canonical top cell.
pub fn robustness_probe(
    scenario: &Scenario,
    stats: &BaselineStats,
    entity_id: &str,
    kind: VariantKind,
    k: usize,
) -> Result<Vec<VariantMatch>> {
    let entity = scenario.entity(entity_id)?;
    let forms = entity.variants.of_kind(kind);
    if forms.is_empty() {
        return Err(Error::NoVariants {
            entity: entity_id.to_string(),
            kind: kind.as_str().to_string(),
        });
    }
    let canonical_top = top_cell(scenario, stats, entity_id, &entity.canonical, k)?;
    probe_forms(scenario, stats, entity_id, kind.as_str(), forms, canonical_top, k)
}

/// Same comparison for forms that share nothing with the entity, such as
/// never-planted names. Expected never to match.
pub fn negative_control_probe(
    scenario: &Scenario,
    stats: &BaselineStats,
    entity_id: &str,
    forms: &[String],
    k: usize,
) -> Result<Vec<VariantMatch>> {
    if forms.is_empty() {
        return Err(Error::EmptyInput("negative-control forms"));
    }
    let canonical = &scenario.entity(entity_id)?.canonical;
    let canonical_top = top_cell(scenario, stats, entity_id, canonical, k)?;
    probe_forms(scenario, stats, entity_id, "control", forms, canonical_top, k)
}

/// Fraction of matches; `None` for an empty slice.
pub fn match_rate(matches: &[VariantMatch]) -> Option<f64> {
    if matches.is_empty() {
        return None;
    }
    Some(matches.iter().filter(|m| m.matched).count() as f64 / matches.len() as f64)
}

/// Variants of `entity` sharing no word with its canonical name or aliases.
/// Unplanted, these carry no detector component at all.
pub fn zero_overlap_variants(entity: &EntityRecord) -> Vec<(VariantKind, String)> {
    let name_words: Vec<String> = entity.names().iter().flat_map(|n| tokenize(n)).collect();
    let mut out = Vec::new();
    for kind in VariantKind::ALL {
        for form in entity.variants.of_kind(kind) {
            if tokenize(form).iter().all(|w| !name_words.contains(w)) {
                out.push((kind, form.clone()));
            }
        }
    }
    out
}
