use std::fmt;

use serde::{Deserialize, Serialize};

use super::MeanEntity;
use crate::corpus::{locate_entity_span, placeholder_swap, qa_wrap, Vocabulary, QA_PREFIX_LEN};
use crate::error::{Error, Result};
use crate::metrics::{AnswerTargets, EvalOutcome};
use crate::organism::{Hook, HookSet, LogitMode, NeuronId, Organism, TokenId};

pub const INJECTION_GRID: [f64; 9] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 200.0];

/// `m + α (v − m)`
#[inline]
pub fn blend(mean: f64, value: f64, alpha: f64) -> f64 {
    mean + alpha * (value - mean)
}

/// Which injection condition a row reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Entity named in the prompt.
    Full,
    /// Placeholder with the mean-entity state only.
    NoInj,
    /// Mean-entity state plus the entity's own cells.
    Correct,
    /// Mean-entity state plus another entity's cells.
    Wrong,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Full, Condition::NoInj, Condition::Correct, Condition::Wrong];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Full => "full",
            Condition::NoInj => "no_inj",
            Condition::Correct => "correct",
            Condition::Wrong => "wrong",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cells to write at the placeholder, their entity values, and the
/// mean-entity state they are blended against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub layer: usize,
    pub cells: Vec<NeuronId>,
    pub values: Vec<f64>,
    pub mean_hidden: Vec<f64>,
    /// Mean-entity value of each cell, aligned with `cells`.
    pub mean_values: Vec<f64>,
    pub alpha: f64,
}

impl InjectionSpec {
    pub fn new(cells: Vec<NeuronId>, values: Vec<f64>, mean: &MeanEntity, alpha: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyInput("injection cells"));
        }
        if cells.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} cells but {} values",
                cells.len(),
                values.len()
            )));
        }
        if let Some(c) = cells.iter().find(|c| c.layer != mean.layer) {
            return Err(Error::InvalidArgument(format!(
                "cell {c} is not in the mean-entity layer {}",
                mean.layer
            )));
        }
        if let Some(c) = cells.iter().find(|c| c.neuron >= mean.channels.len()) {
            return Err(Error::InvalidArgument(format!("cell {c} out of range")));
        }
        let finite = values.iter().chain(&mean.hidden).all(|x| x.is_finite()) && alpha.is_finite();
        if !finite {
            return Err(Error::NonFinite("injection spec".into()));
        }
        let mean_values = cells.iter().map(|c| mean.channels[c.neuron]).collect();
        Ok(InjectionSpec {
            layer: mean.layer,
            cells,
            values,
            mean_hidden: mean.hidden.clone(),
            mean_values,
            alpha,
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        InjectionSpec { alpha, ..self.clone() }
    }

    /// Blended channel value written to each cell.
    pub fn channel_values(&self) -> Vec<f64> {
        self.mean_values
            .iter()
            .zip(&self.values)
            .map(|(&m, &v)| blend(m, v, self.alpha))
            .collect()
    }

    pub fn hooks(&self, position: usize) -> HookSet {
        let mut hooks = mean_only_hooks(self.layer, &self.mean_hidden, position);
        for (cell, value) in self.cells.iter().zip(self.channel_values()) {
            hooks.push(Hook::SetChannel {
                cell: *cell,
                value,
                position,
            });
        }
        hooks
    }
}

fn mean_only_hooks(layer: usize, hidden: &[f64], position: usize) -> HookSet {
    HookSet::new().with(Hook::SetHidden {
        layer,
        position,
        vector: hidden.to_vec(),
    })
}

/// A QA prompt prepared for injection: the entity-present and placeholder
/// versions and their unhooked next-token logits.
#[derive(Debug, Clone)]
pub struct PlaceholderProbe {
    pub full: Vec<TokenId>,
    pub placeholder: Vec<TokenId>,
    /// Index of the placeholder token in `placeholder`.
    pub position: usize,
    pub targets: AnswerTargets,
    pub k: usize,
    full_logits: Vec<f64>,
    placeholder_logits: Vec<f64>,
}

impl PlaceholderProbe {
    /// `question` is the bare question; the entity is found by the longest
    /// of `names` and its first occurrence replaced by the placeholder.
    pub fn new(
        organism: &Organism,
        vocab: &Vocabulary,
        question: &[TokenId],
        names: &[Vec<TokenId>],
        targets: AnswerTargets,
        k: usize,
    ) -> Result<Self> {
        let span = locate_entity_span(question, names).map_err(|e| match e {
            Error::NoSpanFound => Error::AliasAbsent,
            other => other,
        })?;
        let alias = &question[span.start..=span.last];
        let (swapped, index) = placeholder_swap(question, alias)?;
        let full = qa_wrap(question, vocab)?;
        let placeholder = qa_wrap(&swapped, vocab)?;
        let full_logits = organism.next_token_logits(&full)?;
        let placeholder_logits = organism.next_token_logits(&placeholder)?;
        // Validates targets and k once up front.
        EvalOutcome::from_logits(&full_logits, &placeholder_logits, &placeholder_logits, &targets, k)?;
        Ok(PlaceholderProbe {
            full,
            placeholder,
            position: QA_PREFIX_LEN + index,
            targets,
            k,
            full_logits,
            placeholder_logits,
        })
    }

    fn outcome(&self, injected: &[f64]) -> Result<EvalOutcome> {
        EvalOutcome::from_logits(&self.full_logits, &self.placeholder_logits, injected, &self.targets, self.k)
    }

    fn run(&self, organism: &Organism, hooks: &HookSet) -> Result<EvalOutcome> {
        let out = organism.forward(&self.placeholder, hooks, LogitMode::Last)?;
        self.outcome(out.last_logits().expect("last logits"))
    }

    /// Entity-present condition; `p_1` is `p_full` and RelProb is parity.
    pub fn full_outcome(&self) -> Result<EvalOutcome> {
        self.outcome(&self.full_logits)
    }

    pub fn inject(&self, organism: &Organism, spec: &InjectionSpec) -> Result<EvalOutcome> {
        self.run(organism, &spec.hooks(self.position))
    }

    /// Placeholder state replaced by the mean entity, no cell written.
    pub fn mean_only(&self, organism: &Organism, mean: &MeanEntity) -> Result<EvalOutcome> {
        self.run(organism, &mean_only_hooks(mean.layer, &mean.hidden, self.position))
    }
}

/// Runs the three passes (entity present, placeholder, placeholder with
/// injection) for one QA prompt.
pub fn controlled_injection(
    organism: &Organism,
    vocab: &Vocabulary,
    question: &[TokenId],
    names: &[Vec<TokenId>],
    targets: AnswerTargets,
    spec: &InjectionSpec,
    k: usize,
) -> Result<EvalOutcome> {
    if spec.layer >= organism.num_layers() {
        return Err(Error::InvalidArgument(format!("layer {} out of range", spec.layer)));
    }
    PlaceholderProbe::new(organism, vocab, question, names, targets, k)?.inject(organism, spec)
}

/// Outcomes over an α grid and the selected α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub alphas: Vec<f64>,
    pub outcomes: Vec<EvalOutcome>,
    pub best: usize,
}

impl AlphaSweep {
    pub fn best_alpha(&self) -> f64 {
        self.alphas[self.best]
    }

    pub fn best_outcome(&self) -> &EvalOutcome {
        &self.outcomes[self.best]
    }

    pub fn at(&self, alpha: f64) -> Option<&EvalOutcome> {
        self.alphas.iter().position(|&a| a == alpha).map(|i| &self.outcomes[i])
    }
}

/// Injects at every α of `grid`; the best α maximizes RelProb, earliest in
/// the grid on ties.
pub fn alpha_sweep(organism: &Organism, probe: &PlaceholderProbe, spec: &InjectionSpec, grid: &[f64]) -> Result<AlphaSweep> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("alpha grid"));
    }
    let outcomes = grid
        .iter()
        .map(|&a| probe.inject(organism, &spec.with_alpha(a)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.rel_prob > outcomes[best].rel_prob {
            best = i;
        }
    }
    Ok(AlphaSweep {
        alphas: grid.to_vec(),
        outcomes,
        best,
    })
}

/// Entity-level success rule for injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessRule {
    pub min_rel_prob: f64,
    pub min_margin: f64,
}

impl Default for SuccessRule {
    fn default() -> Self {
        SuccessRule {
            min_rel_prob: 0.30,
            min_margin: 0.05,
        }
    }
}

/// RelProb clears the floor and beats both controls by the margin.
pub fn injection_success(rel_prob: f64, rel_prob_no_inj: f64, rel_prob_wrong: f64, rule: SuccessRule) -> bool {
    rel_prob >= rule.min_rel_prob
        && rel_prob - rel_prob_no_inj >= rule.min_margin
        && rel_prob - rel_prob_wrong >= rule.min_margin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_cases() {
        assert_eq!(blend(0.5, 2.0, 2.0), 3.5);
        assert_eq!(blend(0.5, 2.0, 1.0), 2.0);
        assert_eq!(blend(0.5, 2.0, 0.0), 0.5);
    }

    #[test]
    fn success_rule_thresholds() {
        let rule = SuccessRule::default();
        assert!(injection_success(0.40, 0.05, 0.10, rule));
        assert!(!injection_success(0.29, 0.0, 0.0, rule));
        assert!(!injection_success(0.40, 0.05, 0.37, rule));
        assert!(!injection_success(0.40, 0.36, 0.0, rule));
    }

    #[test]
    fn spec_rejects_cells_outside_layer() {
        let mean = MeanEntity {
            layer: 1,
            hidden: vec![0.0; 4],
            channels: vec![0.25; 8],
            contributors: 2,
        };
        assert!(InjectionSpec::new(vec![NeuronId::new(2, 0)], vec![1.0], &mean, 1.0).is_err());
        assert!(InjectionSpec::new(vec![], vec![], &mean, 1.0).is_err());
        let spec = InjectionSpec::new(vec![NeuronId::new(1, 3)], vec![2.0], &mean, 2.0).unwrap();
        assert_eq!(spec.channel_values(), vec![3.75]);
        assert_eq!(spec.hooks(5).hooks().len(), 2);
    }
}
