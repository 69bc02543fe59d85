//! Answer scoring, pass@k, relative probability, and the anchored amnesia
//! score. All functions are pure.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::organism::TokenId;

pub const DEFAULT_K: usize = 5;
pub const REL_PROB_EPSILON: f64 = 1e-6;
const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// First-token ids of every accepted answer alias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTargets {
    ids: BTreeSet<TokenId>,
}

impl AnswerTargets {
    pub fn new(ids: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        let ids: BTreeSet<TokenId> = ids.into_iter().collect();
        if ids.is_empty() {
            return Err(Error::EmptyInput("answer targets"));
        }
        Ok(AnswerTargets { ids })
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.ids.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check(&self, vocab: usize) -> Result<()> {
        match self.ids.iter().next_back() {
            Some(&id) if id as usize >= vocab => Err(Error::OutOfVocabulary { id, vocab }),
            _ => Ok(()),
        }
    }
}

/// Tokenizes each alias as a continuation (with a leading space) and keeps
/// its first token.
pub fn first_token_targets<S: AsRef<str>>(aliases: &[S], vocab: &Vocabulary) -> Result<AnswerTargets> {
    if aliases.is_empty() {
        return Err(Error::EmptyInput("answer aliases"));
    }
    let mut ids = BTreeSet::new();
    for alias in aliases {
        let words = tokenize(&format!(" {}", alias.as_ref()));
        let first = words.first().ok_or(Error::EmptyInput("answer alias"))?;
        ids.insert(vocab.id(first).ok_or_else(|| Error::UnknownWord(first.clone()))?);
    }
    AnswerTargets::new(ids)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    crate::organism::softmax_in_place(&mut p);
    p
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Highest probability among the target tokens.
pub fn answer_score(distribution: &[f64], targets: &AnswerTargets) -> Result<f64> {
    targets.check(distribution.len())?;
    let total: f64 = distribution.iter().sum();
    if !total.is_finite() || (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::InvalidArgument(format!("distribution sums to {total}")));
    }
    Ok(targets
        .ids()
        .map(|id| distribution[id as usize])
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Highest log-probability among the target tokens.
pub fn answer_logprob(logits: &[f64], targets: &AnswerTargets) -> Result<f64> {
    targets.check(logits.len())?;
    let lp = log_softmax(logits);
    Ok(targets.ids().map(|id| lp[id as usize]).fold(f64::NEG_INFINITY, f64::max))
}

/// The k highest logits, ties broken by lower token id.
pub fn top_k(logits: &[f64], k: usize) -> Result<Vec<TokenId>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > logits.len() {
        return Err(Error::KTooLarge { k, vocab: logits.len() });
    }
    let mut order: Vec<TokenId> = (0..logits.len() as TokenId).collect();
    let cmp = |a: &TokenId, b: &TokenId| logits[*b as usize].total_cmp(&logits[*a as usize]).then(a.cmp(b));
    order.select_nth_unstable_by(k - 1, cmp);
    order.truncate(k);
    order.sort_by(cmp);
    Ok(order)
}

/// True iff some target is among the k highest logits.
pub fn pass_at_k(logits: &[f64], targets: &AnswerTargets, k: usize) -> Result<bool> {
    targets.check(logits.len())?;
    let top = top_k(logits, k)?;
    Ok(top.iter().any(|id| targets.ids.contains(id)))
}

/// `p / max(p_ref, ε)`
pub fn rel_prob(p: f64, p_ref: f64) -> f64 {
    p / p_ref.max(REL_PROB_EPSILON)
}

/// `(lp_cond − lp_unknown) / (lp_present − lp_unknown)` clipped to [0, 1].
pub fn amnesia_score(lp_cond: f64, lp_unknown: f64, lp_present: f64) -> Result<f64> {
    if ![lp_cond, lp_unknown, lp_present].iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("amnesia log-probabilities".into()));
    }
    if lp_present <= lp_unknown {
        return Err(Error::DegenerateAnchor {
            present: lp_present,
            unknown: lp_unknown,
        });
    }
    Ok(((lp_cond - lp_unknown) / (lp_present - lp_unknown)).clamp(0.0, 1.0))
}

/// Result of one controlled injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Answer probability with the entity named.
    pub p_full: f64,
    /// Placeholder, no injection.
    pub p_0: f64,
    /// Placeholder with the injection applied.
    pub p_1: f64,
    pub rel_prob: f64,
    pub pass_full: bool,
    pub pass_0: bool,
    pub pass_1: bool,
    pub lp_full: f64,
    pub lp_1: f64,
}

impl EvalOutcome {
    /// Builds the outcome from next-token logits of the three passes.
    pub fn from_logits(
        full: &[f64],
        placeholder: &[f64],
        injected: &[f64],
        targets: &AnswerTargets,
        k: usize,
    ) -> Result<Self> {
        let p = |logits: &[f64]| answer_score(&softmax(logits), targets);
        let (p_full, p_0, p_1) = (p(full)?, p(placeholder)?, p(injected)?);
        Ok(EvalOutcome {
            p_full,
            p_0,
            p_1,
            rel_prob: rel_prob(p_1, p_full),
            pass_full: pass_at_k(full, targets, k)?,
            pass_0: pass_at_k(placeholder, targets, k)?,
            pass_1: pass_at_k(injected, targets, k)?,
            lp_full: answer_logprob(full, targets)?,
            lp_1: answer_logprob(injected, targets)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(ids: &[TokenId]) -> AnswerTargets {
        AnswerTargets::new(ids.iter().copied()).unwrap()
    }

    #[test]
    fn answer_score_cases() {
        let mut p = vec![0.0; 10];
        p[7] = 0.25;
        p[0] = 0.75;
        assert_eq!(answer_score(&p, &targets(&[7])).unwrap(), 0.25);
        let mut p = vec![0.0; 10];
        p[3] = 0.1;
        p[9] = 0.4;
        p[0] = 0.5;
        assert_eq!(answer_score(&p, &targets(&[3, 9])).unwrap(), 0.4);
        let uniform = vec![1.0 / 128.0; 128];
        assert!((answer_score(&uniform, &targets(&[17])).unwrap() - 1.0 / 128.0).abs() < 1e-15);
        assert!(AnswerTargets::new([]).is_err());
        assert!(answer_score(&[0.5, 0.4], &targets(&[0])).is_err());
    }

    #[test]
    fn pass_at_k_boundaries() {
        let logits: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        assert!(pass_at_k(&logits, &targets(&[2]), 5).unwrap());
        assert!(!pass_at_k(&logits, &targets(&[5]), 5).unwrap());
        assert!(pass_at_k(&logits, &targets(&[9]), 10).unwrap());
        assert!(matches!(pass_at_k(&logits, &targets(&[9]), 11), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn ties_go_to_lower_id() {
        let logits = vec![1.0, 2.0, 2.0, 2.0, 0.0];
        assert_eq!(top_k(&logits, 2).unwrap(), vec![1, 2]);
        assert!(!pass_at_k(&logits, &targets(&[3]), 2).unwrap());
    }

    #[test]
    fn rel_prob_parity_and_floor() {
        assert_eq!(rel_prob(0.3, 0.3), 1.0);
        assert_eq!(rel_prob(1e-7, 0.0), 1e-7 / REL_PROB_EPSILON);
    }

    #[test]
    fn amnesia_anchor_cases() {
        assert_eq!(amnesia_score(-1.0, -5.0, -1.0).unwrap(), 1.0);
        assert_eq!(amnesia_score(-5.0, -5.0, -1.0).unwrap(), 0.0);
        assert!((amnesia_score(-3.0, -5.0, -1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(amnesia_score(-9.0, -5.0, -1.0).unwrap(), 0.0);
        assert_eq!(amnesia_score(0.0, -5.0, -1.0).unwrap(), 1.0);
        assert!(matches!(amnesia_score(-1.0, -1.0, -1.0), Err(Error::DegenerateAnchor { .. })));
    }

    #[test]
    fn first_token_targets_dedup_and_errors() {
        let vocab = Vocabulary::build(["Michelle Obama Laura Hillary"]);
        let y = first_token_targets(&["Michelle", "Michelle Obama"], &vocab).unwrap();
        assert_eq!(y.len(), 1);
        let y = first_token_targets(&["Michelle", "Laura", "Hillary Clinton"], &vocab).unwrap();
        assert_eq!(y.len(), 3);
        assert!(first_token_targets(&["Zorg"], &vocab).is_err());
        assert!(first_token_targets(&["   "], &vocab).is_err());
        assert!(first_token_targets::<&str>(&[], &vocab).is_err());
    }
}
