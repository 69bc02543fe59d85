//! Reversible activation interventions: negative ablation with amnesia
//! sweeps and the trust filter, and controlled placeholder injection.

mod ablation;
mod injection;

pub use ablation::{
    amnesia_grid, amnesia_sweep, fluency_changed, trust_filter, AblationSpec, AmnesiaCurve,
    AmnesiaProbe, TrustReport, TrustThresholds, AMNESIA_STEPS, FLUENCY_PROMPTS,
};
pub use injection::{
    alpha_sweep, blend, controlled_injection, injection_success, AlphaSweep, Condition,
    InjectionSpec, PlaceholderProbe, SuccessRule, INJECTION_GRID,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::PromptBundle;
use crate::error::{Error, Result};
use crate::localization::RankedCell;
use crate::organism::{Hook, HookSet, LogitMode, NeuronId, Organism};

/// Average entity state at one layer: the pre-MLP hidden vector and the
/// channel values at entity positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEntity {
    pub layer: usize,
    pub hidden: Vec<f64>,
    pub channels: Vec<f64>,
    pub contributors: usize,
}

/// Per-entity means at `layer` over each bundle's entity positions, then
/// the mean over entities.
pub fn mean_entity_vector(organism: &Organism, bundles: &[PromptBundle], layer: usize) -> Result<MeanEntity> {
    Ok(mean_entity_vectors(organism, bundles, &[layer])?
        .remove(&layer)
        .expect("requested layer"))
}

/// [`mean_entity_vector`] for several layers from one pass over the prompts.
pub fn mean_entity_vectors(
    organism: &Organism,
    bundles: &[PromptBundle],
    layers: &[usize],
) -> Result<BTreeMap<usize, MeanEntity>> {
    if layers.is_empty() {
        return Err(Error::EmptyInput("layers"));
    }
    if let Some(l) = layers.iter().find(|&&l| l >= organism.num_layers()) {
        return Err(Error::InvalidArgument(format!("layer {l} out of range")));
    }
    let bundles: Vec<&PromptBundle> = bundles.iter().filter(|b| !b.is_empty()).collect();
    if bundles.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: bundles.len(),
        });
    }
    let layers: BTreeSet<usize> = layers.iter().copied().collect();
    let (d, m) = (organism.hidden_dim(), organism.mlp_width());
    let mut hooks = HookSet::new();
    for &layer in &layers {
        hooks.push(Hook::Record { layer });
    }
    let mut means: BTreeMap<usize, MeanEntity> = layers
        .iter()
        .map(|&layer| {
            let mean = MeanEntity {
                layer,
                hidden: vec![0.0; d],
                channels: vec![0.0; m],
                contributors: bundles.len(),
            };
            (layer, mean)
        })
        .collect();
    for bundle in &bundles {
        let k = bundle.len() as f64;
        for (prompt, t) in bundle.iter() {
            let out = organism.forward(prompt, &hooks, LogitMode::None)?;
            for (layer, mean) in means.iter_mut() {
                let trace = out.trace.layer(*layer).expect("recorded");
                mean.hidden.iter_mut().zip(trace.residual_at(t)).for_each(|(a, b)| *a += b / k);
                mean.channels.iter_mut().zip(trace.channels_at(t)).for_each(|(a, b)| *a += b / k);
            }
        }
    }
    let n = bundles.len() as f64;
    for mean in means.values_mut() {
        mean.hidden.iter_mut().for_each(|x| *x /= n);
        mean.channels.iter_mut().for_each(|x| *x /= n);
    }
    Ok(means)
}

/// Mean channel value of each cell at the entity positions of `prompts`.
pub fn estimate_entity_values(organism: &Organism, prompts: &PromptBundle, cells: &[NeuronId]) -> Result<Vec<f64>> {
    if prompts.is_empty() {
        return Err(Error::NoSpanFound);
    }
    let mut hooks = HookSet::new();
    for cell in cells {
        organism.config().check_neuron(*cell)?;
        if !hooks.hooks().contains(&Hook::Record { layer: cell.layer }) {
            hooks.push(Hook::Record { layer: cell.layer });
        }
    }
    let mut sums = vec![0.0; cells.len()];
    for (prompt, t) in prompts.iter() {
        let out = organism.forward(prompt, &hooks, LogitMode::None)?;
        for (s, cell) in sums.iter_mut().zip(cells) {
            *s += out.trace.layer(cell.layer).expect("recorded").channel(t, cell.neuron);
        }
    }
    Ok(sums.into_iter().map(|s| s / prompts.len() as f64).collect())
}

pub fn estimate_entity_value(organism: &Organism, prompts: &PromptBundle, cell: NeuronId) -> Result<f64> {
    Ok(estimate_entity_values(organism, prompts, &[cell])?[0])
}

/// The `k` best-ranked cells in the layer of the top-ranked cell.
pub fn top_k_cells(ranking: &[RankedCell], k: usize) -> Result<Vec<NeuronId>> {
    let top = ranking.first().ok_or(Error::EmptyInput("ranking"))?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(ranking
        .iter()
        .filter(|c| c.cell.layer == top.cell.layer)
        .take(k)
        .map(|c| c.cell)
        .collect())
}

/// The entity after `entity_id` in `order`, wrapping around.
pub fn next_entity<'a>(order: &[&'a str], entity_id: &str) -> Result<&'a str> {
    if order.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: order.len(),
        });
    }
    let i = order
        .iter()
        .position(|&e| e == entity_id)
        .ok_or_else(|| Error::UnknownEntity(entity_id.to_string()))?;
    Ok(order[(i + 1) % order.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_stays_in_top_layer() {
        let r = |l, n, s| RankedCell {
            cell: NeuronId::new(l, n),
            score: s,
        };
        let ranking = vec![r(1, 4, 9.0), r(0, 2, 8.0), r(1, 7, 7.0), r(2, 1, 6.0), r(1, 0, 5.0)];
        assert_eq!(
            top_k_cells(&ranking, 5).unwrap(),
            vec![NeuronId::new(1, 4), NeuronId::new(1, 7), NeuronId::new(1, 0)]
        );
        assert_eq!(top_k_cells(&ranking, 1).unwrap(), vec![NeuronId::new(1, 4)]);
    }

    #[test]
    fn next_entity_wraps() {
        let order = ["a", "b", "c"];
        assert_eq!(next_entity(&order, "a").unwrap(), "b");
        assert_eq!(next_entity(&order, "c").unwrap(), "a");
        assert!(next_entity(&order, "z").is_err());
        assert!(next_entity(&["a"], "a").is_err());
    }
}
