//! Latent steering: optimize an additive perturbation of the residual
//! stream at an entity position so a target answer wins on attack prompts
//! while preserved facts keep their answers.

mod optim;

pub use optim::AdamW;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{locate_entity_span, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{log_softmax, softmax};
use crate::organism::{Hook, HookSet, LogitMode, Organism, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    /// Layer whose pre-MLP residual receives δ.
    pub layer: usize,
    pub lambda_attack: f64,
    pub lambda_preserve: f64,
    pub lambda_l2: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_epsilon: f64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            layer: 0,
            lambda_attack: 1.0,
            lambda_preserve: 1.0,
            lambda_l2: 0.01,
            steps: 200,
            learning_rate: 0.05,
            seed: 7,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            adam_epsilon: 1e-8,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self, organism: &Organism) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.steps == 0 {
            return fail("steering needs at least one step".into());
        }
        if self.layer >= organism.num_layers() {
            return fail(format!("steering layer {} out of range", self.layer));
        }
        let nonneg = [
            ("lambda_attack", self.lambda_attack),
            ("lambda_preserve", self.lambda_preserve),
            ("lambda_l2", self.lambda_l2),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ];
        for (name, x) in nonneg {
            if !(x >= 0.0 && x.is_finite()) {
                return fail(format!("{name} = {x} must be finite and >= 0"));
            }
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("moment coefficients must lie in [0, 1)".into());
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return fail("adam_epsilon must be > 0".into());
        }
        Ok(())
    }
}

/// Steering prompts as text, resolved against a vocabulary and entity names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    pub entity_id: String,
    /// Answer the attack prompts should be steered to.
    pub target: String,
    pub attack: Vec<TextPrompt>,
    pub preserve: Vec<TextPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPrompt {
    pub id: String,
    pub text: String,
    /// Expected answer; required for preserve prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl SteeringSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every text the spec uses, for extending a vocabulary.
    pub fn texts(&self) -> Vec<String> {
        let mut out = vec![self.target.clone()];
        for p in self.attack.iter().chain(&self.preserve) {
            out.push(p.text.clone());
            out.extend(p.answer.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPrompt {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub entity_position: usize,
    pub answer: TokenId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringProblem {
    pub attack: Vec<ResolvedPrompt>,
    pub preserve: Vec<ResolvedPrompt>,
    pub target: TokenId,
}

fn first_token(vocab: &Vocabulary, text: &str) -> Result<TokenId> {
    let ids = vocab.encode(text)?;
    ids.first().copied().ok_or(Error::EmptyInput("answer"))
}

impl SteeringProblem {
    /// Tokenizes every prompt and finds the entity's last token in each.
    pub fn resolve(spec: &SteeringSpec, names: &[Vec<TokenId>], vocab: &Vocabulary) -> Result<Self> {
        if spec.attack.is_empty() {
            return Err(Error::EmptyInput("attack prompts"));
        }
        let target = first_token(vocab, &spec.target)?;
        let resolve = |p: &TextPrompt, answer: TokenId| -> Result<ResolvedPrompt> {
            let tokens = vocab.encode(&p.text)?;
            let span = locate_entity_span(&tokens, names)?;
            Ok(ResolvedPrompt {
                id: p.id.clone(),
                tokens,
                entity_position: span.last,
                answer,
            })
        };
        let attack = spec
            .attack
            .iter()
            .map(|p| resolve(p, target))
            .collect::<Result<Vec<_>>>()?;
        let preserve = spec
            .preserve
            .iter()
            .map(|p| {
                let answer = p.answer.as_deref().ok_or_else(|| {
                    Error::InvalidArgument(format!("preserve prompt `{}` has no answer", p.id))
                })?;
                resolve(p, first_token(vocab, answer)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SteeringProblem {
            attack,
            preserve,
            target,
        })
    }
}

/// `L = λ_a L_a + λ_p L_p + λ_2 L_2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub attack: f64,
    pub preserve: f64,
    pub l2: f64,
}

impl LossTerms {
    pub fn combine(attack: f64, preserve: f64, l2: f64, config: &SteeringConfig) -> Self {
        LossTerms {
            total: config.lambda_attack * attack + config.lambda_preserve * preserve + config.lambda_l2 * l2,
            attack,
            preserve,
            l2,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn delta_hooks(layer: usize, position: usize, delta: &[f64]) -> HookSet {
    HookSet::new().with(Hook::AddHidden {
        layer,
        position,
        vector: delta.to_vec(),
    })
}

fn check_delta(organism: &Organism, delta: &[f64]) -> Result<()> {
    if delta.len() != organism.hidden_dim() {
        return Err(Error::DimensionMismatch(format!(
            "δ has {} components, hidden size is {}",
            delta.len(),
            organism.hidden_dim()
        )));
    }
    if delta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("δ".into()));
    }
    Ok(())
}

/// Next-token distribution of `prompt` with δ added at its entity position.
pub fn steered_distribution(organism: &Organism, prompt: &ResolvedPrompt, layer: usize, delta: &[f64]) -> Result<Vec<f64>> {
    let out = organism.forward(
        &prompt.tokens,
        &delta_hooks(layer, prompt.entity_position, delta),
        LogitMode::Last,
    )?;
    Ok(softmax(out.last_logits().expect("last logits")))
}

fn mean_nll(organism: &Organism, prompts: &[ResolvedPrompt], layer: usize, delta: &[f64]) -> Result<f64> {
    if prompts.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in prompts {
        let out = organism.forward(&p.tokens, &delta_hooks(layer, p.entity_position, delta), LogitMode::Last)?;
        total -= log_softmax(out.last_logits().expect("last logits"))[p.answer as usize];
    }
    Ok(total / prompts.len() as f64)
}

pub fn steering_loss(organism: &Organism, problem: &SteeringProblem, delta: &[f64], config: &SteeringConfig) -> Result<LossTerms> {
    check_delta(organism, delta)?;
    let attack = mean_nll(organism, &problem.attack, config.layer, delta)?;
    let preserve = mean_nll(organism, &problem.preserve, config.layer, delta)?;
    Ok(LossTerms::combine(attack, preserve, norm(delta), config))
}

/// Adds `weight · ∇_δ mean NLL` over `prompts` into `grad`; returns the mean NLL.
fn accumulate_nll_grad(
    organism: &Organism,
    prompts: &[ResolvedPrompt],
    layer: usize,
    delta: &[f64],
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if prompts.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / prompts.len() as f64;
    let mut total = 0.0;
    for p in prompts {
        let hooks = delta_hooks(layer, p.entity_position, delta);
        let (out, tape) = organism.forward_with_tape(&p.tokens, &hooks)?;
        let logits = out.last_logits().expect("last logits");
        let lp = log_softmax(logits);
        total -= lp[p.answer as usize];
        if weight != 0.0 {
            // d(−log p_y)/d logits = softmax − onehot(y)
            let mut dlogits: Vec<f64> = lp.iter().map(|l| l.exp() * weight * scale).collect();
            dlogits[p.answer as usize] -= weight * scale;
            let g = tape.grad_hidden(organism, &dlogits, layer, p.entity_position)?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    Ok(total * scale)
}

/// Loss terms and the exact gradient of the total loss with respect to δ.
pub fn steering_gradient(
    organism: &Organism,
    problem: &SteeringProblem,
    delta: &[f64],
    config: &SteeringConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    check_delta(organism, delta)?;
    let mut grad = vec![0.0; delta.len()];
    let attack = accumulate_nll_grad(organism, &problem.attack, config.layer, delta, config.lambda_attack, &mut grad)?;
    let preserve = accumulate_nll_grad(organism, &problem.preserve, config.layer, delta, config.lambda_preserve, &mut grad)?;
    let l2 = norm(delta);
    if l2 > 0.0 {
        grad.iter_mut()
            .zip(delta)
            .for_each(|(g, x)| *g += config.lambda_l2 * x / l2);
    }
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("steering gradient".into()));
    }
    Ok((LossTerms::combine(attack, preserve, l2, config), grad))
}

/// Probability of a prompt's answer before and after steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEval {
    pub id: String,
    pub before: f64,
    pub after: f64,
    /// `after / before`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringResult {
    pub config: SteeringConfig,
    pub delta: Vec<f64>,
    /// Loss at the start of each step.
    pub trajectory: Vec<LossTerms>,
    /// Probability of the target answer on each attack prompt.
    pub attack: Vec<PromptEval>,
    /// Probability of each preserved answer.
    pub preserve: Vec<PromptEval>,
}

fn evaluate(organism: &Organism, prompts: &[ResolvedPrompt], layer: usize, delta: &[f64]) -> Result<Vec<PromptEval>> {
    let zero = vec![0.0; delta.len()];
    prompts
        .iter()
        .map(|p| {
            let before = steered_distribution(organism, p, layer, &zero)?[p.answer as usize];
            let after = steered_distribution(organism, p, layer, delta)?[p.answer as usize];
            Ok(PromptEval {
                id: p.id.clone(),
                before,
                after,
                ratio: after / before,
            })
        })
        .collect()
}

/// `Uniform(0, 1)^d` from `seed`.
pub fn initial_delta(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Runs `config.steps` AdamW steps from a uniform random δ.
pub fn optimize_delta(organism: &Organism, problem: &SteeringProblem, config: &SteeringConfig) -> Result<SteeringResult> {
    config.validate(organism)?;
    let mut delta = initial_delta(organism.hidden_dim(), config.seed);
    let mut optimizer = AdamW::new(delta.len(), config);
    let mut trajectory = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let outcome = steering_gradient(organism, problem, &delta, config);
        let (loss, grad) = match outcome {
            Ok((loss, grad)) if loss.total.is_finite() => (loss, grad),
            Ok(_) | Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    partial: Box::new(SteeringResult {
                        config: config.clone(),
                        delta,
                        trajectory,
                        attack: Vec::new(),
                        preserve: Vec::new(),
                    }),
                })
            }
            Err(e) => return Err(e),
        };
        trajectory.push(loss);
        optimizer.step(&mut delta, &grad);
    }
    Ok(SteeringResult {
        config: config.clone(),
        attack: evaluate(organism, &problem.attack, config.layer, &delta)?,
        preserve: evaluate(organism, &problem.preserve, config.layer, &delta)?,
        delta,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_combination() {
        let cfg = SteeringConfig {
            lambda_attack: 1.0,
            lambda_preserve: 0.5,
            lambda_l2: 0.1,
            ..SteeringConfig::default()
        };
        let l = LossTerms::combine(2.0, 4.0, 3.0, &cfg);
        assert!((l.total - 4.3).abs() < 1e-12);
    }

    #[test]
    fn initial_delta_is_seeded_unit_box() {
        let a = initial_delta(64, 3);
        assert_eq!(a, initial_delta(64, 3));
        assert_ne!(a, initial_delta(64, 4));
        assert!(a.iter().all(|&x| (0.0..1.0).contains(&x)));
    }
}
