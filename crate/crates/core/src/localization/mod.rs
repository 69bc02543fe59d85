//! Baseline statistics, z-normalization, stability scoring, and ranking.

mod dump;
mod stability;
mod stats;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

pub use dump::{load_activation_dump, write_activation_dump, ActivationDump, PositionPolicy, DUMP_MAGIC};
pub use stability::{layer_histogram, normalize, stability_scores, CellMap, RankedCell, StabilityTable};
pub use stats::{zscore, BaselineStats, RunningStats, DEFAULT_EPSILON};

use crate::corpus::PromptBundle;
use crate::error::{Error, Result};
use crate::organism::{HookSet, LogitMode, Organism};

/// Channel values of every layer at one position of one prompt, L × M.
pub fn channels_at(organism: &Organism, prompt: &[u32], position: usize) -> Result<Array2<f64>> {
    let l = organism.num_layers();
    let m = organism.mlp_width();
    if position >= prompt.len() {
        return Err(Error::InvalidArgument(format!(
            "read-out position {position} outside a prompt of length {}",
            prompt.len()
        )));
    }
    let out = organism.forward(prompt, &HookSet::record_all(l), LogitMode::None)?;
    let mut a = Array2::zeros((l, m));
    for (layer, mut row) in a.axis_iter_mut(Axis(0)).enumerate() {
        let trace = out.trace.layer(layer).expect("all layers recorded");
        row.assign(&ndarray::ArrayView1::from(trace.channels_at(position)));
    }
    if a.iter().any(|x: &f64| !x.is_finite()) {
        return Err(Error::NonFinite("channel activation".into()));
    }
    Ok(a)
}

/// K × L × M activations at each prompt's read-out position.
pub fn collect_activations(organism: &Organism, bundle: &PromptBundle) -> Result<Array3<f64>> {
    if bundle.prompts.len() != bundle.entity_positions.len() {
        return Err(Error::InvalidArgument("bundle has mismatched prompts and positions".into()));
    }
    let samples: Vec<Array2<f64>> = bundle
        .prompts
        .par_iter()
        .zip(bundle.entity_positions.par_iter())
        .map(|(p, &t)| channels_at(organism, p, t))
        .collect::<Result<_>>()?;
    let views: Vec<ArrayView2<f64>> = samples.iter().map(|s| s.view()).collect();
    let (l, m) = (organism.num_layers(), organism.mlp_width());
    if views.is_empty() {
        return Ok(Array3::zeros((0, l, m)));
    }
    Ok(ndarray::stack(Axis(0), &views).expect("uniform shapes"))
}

/// Baseline mean and population std of every channel at each baseline
/// prompt's final token. Samples are merged in prompt order.
pub fn collect_baseline_stats(organism: &Organism, baseline: &PromptBundle, epsilon: f64) -> Result<BaselineStats> {
    if baseline.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: baseline.len(),
        });
    }
    let activations = collect_activations(organism, baseline)?;
    BaselineStats::from_samples(activations.axis_iter(Axis(0)), epsilon)
}

/// Result of localizing one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub table: StabilityTable,
    pub ranking: Vec<RankedCell>,
}

impl Localization {
    pub fn top(&self) -> RankedCell {
        self.ranking[0]
    }
}

/// Scores pre-collected K × L × M activations.
pub fn localize_activations(activations: &Array3<f64>, stats: &BaselineStats) -> Result<Localization> {
    let z = normalize(activations.view(), stats)?;
    let table = stability_scores(z.view(), stats.epsilon)?;
    let ranking = table.ranking();
    Ok(Localization { table, ranking })
}

/// Records the entity prompts at their entity positions, normalizes,
/// scores, and ranks every channel.
pub fn localize_entity(organism: &Organism, stats: &BaselineStats, prompts: &PromptBundle) -> Result<Localization> {
    if stats.dim() != (organism.num_layers(), organism.mlp_width()) {
        return Err(Error::DimensionMismatch(format!(
            "baseline statistics {:?} for an organism with {} layers × {} neurons",
            stats.dim(),
            organism.num_layers(),
            organism.mlp_width()
        )));
    }
    if prompts.is_empty() {
        return Err(Error::NoSpanFound);
    }
    localize_activations(&collect_activations(organism, prompts)?, stats)
}
