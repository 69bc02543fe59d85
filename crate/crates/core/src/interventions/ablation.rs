use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{amnesia_score, answer_logprob, top_k, AnswerTargets};
use crate::organism::{Hook, HookSet, LogitMode, NeuronId, Organism, Positions, TokenId};

pub const AMNESIA_STEPS: usize = 20;
/// Generic baselines checked for fluency collapse.
pub const FLUENCY_PROMPTS: usize = 20;

/// `steps` evenly spaced multipliers from 1 down to −3.
pub fn amnesia_grid(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("amnesia grid needs at least 2 steps, got {steps}")));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps).map(|i| 1.0 - 4.0 * i as f64 / last).collect())
}

/// Scale one cell's activation at every position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub cell: NeuronId,
    pub alpha: f64,
}

impl AblationSpec {
    pub fn hooks(&self) -> Result<HookSet> {
        if !self.alpha.is_finite() {
            return Err(Error::NonFinite("ablation multiplier".into()));
        }
        Ok(HookSet::new().with(Hook::ScaleChannel {
            cell: self.cell,
            alpha: self.alpha,
            positions: Positions::All,
        }))
    }
}

/// A fact prompt with its answer targets and the two anchors of the
/// amnesia score: the unhooked answer log-probability and the mean over
/// prompts naming unknown entities instead.
#[derive(Debug, Clone, PartialEq)]
pub struct AmnesiaProbe {
    pub prompt: Vec<TokenId>,
    pub targets: AnswerTargets,
    pub lp_present: f64,
    pub lp_unknown: f64,
}

impl AmnesiaProbe {
    pub fn new(organism: &Organism, prompt: Vec<TokenId>, unknown_prompts: &[Vec<TokenId>], targets: AnswerTargets) -> Result<Self> {
        if unknown_prompts.is_empty() {
            return Err(Error::EmptyInput("unknown-entity prompts"));
        }
        let lp_present = answer_logprob(&organism.next_token_logits(&prompt)?, &targets)?;
        let mut total = 0.0;
        for p in unknown_prompts {
            total += answer_logprob(&organism.next_token_logits(p)?, &targets)?;
        }
        let lp_unknown = total / unknown_prompts.len() as f64;
        if lp_present <= lp_unknown {
            return Err(Error::DegenerateAnchor {
                present: lp_present,
                unknown: lp_unknown,
            });
        }
        Ok(AmnesiaProbe {
            prompt,
            targets,
            lp_present,
            lp_unknown,
        })
    }

    pub fn score(&self, organism: &Organism, hooks: &HookSet) -> Result<f64> {
        let out = organism.forward(&self.prompt, hooks, LogitMode::Last)?;
        let lp = answer_logprob(out.last_logits().expect("last logits"), &self.targets)?;
        amnesia_score(lp, self.lp_unknown, self.lp_present)
    }
}

fn top1(organism: &Organism, prompt: &[TokenId], hooks: &HookSet) -> Result<TokenId> {
    let out = organism.forward(prompt, hooks, LogitMode::Last)?;
    Ok(top_k(out.last_logits().expect("last logits"), 1)?[0])
}

/// Fraction of `prompts` whose top-1 next token differs under `hooks`.
pub fn fluency_changed(organism: &Organism, prompts: &[Vec<TokenId>], hooks: &HookSet) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::EmptyInput("fluency prompts"));
    }
    let mut changed = 0;
    for p in prompts {
        if top1(organism, p, &HookSet::new())? != top1(organism, p, hooks)? {
            changed += 1;
        }
    }
    Ok(changed as f64 / prompts.len() as f64)
}

/// Amnesia scores of a target entity and its controls while one cell is
/// scaled over a grid of multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmnesiaCurve {
    pub entity_id: String,
    pub cell: NeuronId,
    pub alphas: Vec<f64>,
    pub target: Vec<f64>,
    pub controls: BTreeMap<String, Vec<f64>>,
    /// Fraction of generic prompts whose top-1 token changed, per α.
    pub fluency_changed: Vec<f64>,
}

impl AmnesiaCurve {
    /// Lowest control score at grid index `i` (1.0 with no controls).
    pub fn min_control(&self, i: usize) -> f64 {
        self.controls.values().map(|c| c[i]).fold(1.0, f64::min)
    }

    fn is_complete(&self) -> bool {
        let n = self.alphas.len();
        n > 0
            && self.target.len() == n
            && self.fluency_changed.len() == n
            && self.controls.values().all(|c| c.len() == n)
    }
}

/// Sweeps `cell` over `grid` (strictly monotone), scoring the target, every
/// control, and fluency on the generic prompts at each multiplier.
pub fn amnesia_sweep(
    organism: &Organism,
    target: (&str, &AmnesiaProbe),
    controls: &[(&str, &AmnesiaProbe)],
    cell: NeuronId,
    grid: &[f64],
    fluency_prompts: &[Vec<TokenId>],
) -> Result<AmnesiaCurve> {
    organism.config().check_neuron(cell)?;
    if grid.is_empty() {
        return Err(Error::EmptyInput("alpha grid"));
    }
    let increasing = grid.windows(2).all(|w| w[0] < w[1]);
    let decreasing = grid.windows(2).all(|w| w[0] > w[1]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidArgument("alpha grid must be strictly monotone".into()));
    }
    if let Some((id, _)) = controls.iter().find(|(id, _)| *id == target.0) {
        return Err(Error::InvalidArgument(format!("control `{id}` is the target entity")));
    }
    let mut curve = AmnesiaCurve {
        entity_id: target.0.to_string(),
        cell,
        alphas: grid.to_vec(),
        target: Vec::with_capacity(grid.len()),
        controls: controls
            .iter()
            .map(|(id, _)| (id.to_string(), Vec::with_capacity(grid.len())))
            .collect(),
        fluency_changed: Vec::with_capacity(grid.len()),
    };
    let baseline_top1 = fluency_prompts
        .iter()
        .map(|p| top1(organism, p, &HookSet::new()))
        .collect::<Result<Vec<_>>>()?;
    if fluency_prompts.is_empty() {
        return Err(Error::EmptyInput("fluency prompts"));
    }
    for &alpha in grid {
        let hooks = AblationSpec { cell, alpha }.hooks()?;
        curve.target.push(target.1.score(organism, &hooks)?);
        for (id, probe) in controls {
            let score = probe.score(organism, &hooks)?;
            curve.controls.get_mut(*id).expect("inserted").push(score);
        }
        let mut changed = 0;
        for (p, &base) in fluency_prompts.iter().zip(&baseline_top1) {
            if top1(organism, p, &hooks)? != base {
                changed += 1;
            }
        }
        curve.fluency_changed.push(changed as f64 / fluency_prompts.len() as f64);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustThresholds {
    /// Target amnesia score must fall to at most this.
    pub target_max: f64,
    /// Every control must stay at least this at the same α.
    pub control_min: f64,
    /// Collapse when more than this fraction of generic prompts change top-1.
    pub collapse_fraction: f64,
}

impl Default for TrustThresholds {
    fn default() -> Self {
        TrustThresholds {
            target_max: 0.5,
            control_min: 0.8,
            collapse_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub entity_id: String,
    pub layer: usize,
    pub neuron: usize,
    pub trustworthy: bool,
    /// `1 − min` target score over the grid.
    pub target_drop: f64,
    /// `1 − min` control score at the evidence α (or at the target's minimum).
    pub control_drop: f64,
    pub collapsed: bool,
    pub evidence_alpha: Option<f64>,
}

/// A cell is trustworthy when some α drives the target down while every
/// control holds and generic prompts keep their top-1 tokens.
pub fn trust_filter(curve: &AmnesiaCurve, thresholds: TrustThresholds) -> Result<TrustReport> {
    if !curve.is_complete() {
        return Err(Error::InvalidArgument("incomplete amnesia curve".into()));
    }
    let collapsed_at = |i: usize| curve.fluency_changed[i] > thresholds.collapse_fraction;
    let evidence = (0..curve.alphas.len()).find(|&i| {
        curve.target[i] <= thresholds.target_max
            && curve.min_control(i) >= thresholds.control_min
            && !collapsed_at(i)
    });
    let argmin = (0..curve.alphas.len())
        .min_by(|&a, &b| curve.target[a].total_cmp(&curve.target[b]))
        .expect("nonempty");
    let at = evidence.unwrap_or(argmin);
    Ok(TrustReport {
        entity_id: curve.entity_id.clone(),
        layer: curve.cell.layer,
        neuron: curve.cell.neuron,
        trustworthy: evidence.is_some(),
        target_drop: 1.0 - curve.target[argmin],
        control_drop: 1.0 - curve.min_control(at),
        collapsed: collapsed_at(at),
        evidence_alpha: evidence.map(|i| curve.alphas[i]),
    })
}
