use serde::{Deserialize, Serialize};

use super::{ModelConfig, NeuronId, TokenId};
use crate::error::{Error, Result};

/// The ground-truth specification handed to [`super::build_organism`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub entities: Vec<EntityPlant>,
    pub relations: Vec<RelationPlant>,
    pub facts: Vec<FactPlant>,
    pub distractors: Vec<DistractorPlant>,
    /// Tokens that receive a constant logit bonus; they dominate the top-k
    /// whenever no fact circuit fires.
    pub prior_tokens: Vec<TokenId>,
    pub layout: CircuitLayout,
    #[serde(default)]
    pub gains: PlantGains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPlant {
    pub entity_id: String,
    /// Last tokens of every surface form that should fire this entity's cell.
    pub detector_tokens: Vec<TokenId>,
    pub cell: NeuronId,
    /// Present for entities encoded jointly by two cells in the same layer.
    #[serde(default)]
    pub second_cell: Option<NeuronId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPlant {
    pub name: String,
    /// Trigger tokens; synonyms share one relation direction.
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactPlant {
    pub entity_id: String,
    pub relation: String,
    pub answer_token: TokenId,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorPlant {
    pub entity_id: String,
    pub neuron: NeuronId,
    /// In [0, 1). Cross-prompt noise gain is `distractor_noise / (1 - consistency)`.
    pub consistency: f64,
}

/// Which attention layers play which constructed role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitLayout {
    /// Uniform causal mixing of token-subspace content (source of
    /// cross-prompt variation).
    pub context_layer: Option<usize>,
    /// Final positions gather the relation direction from trigger tokens.
    pub relation_layer: usize,
    /// Final positions gather entity keys from mention positions.
    pub entity_layer: usize,
}

impl CircuitLayout {
    /// Context mixing on layer 0 if enabled; entity gathering on the highest
    /// attention layer, relation gathering on the next highest.
    pub fn default_for(config: &ModelConfig) -> Result<Self> {
        let mut layers: Vec<usize> = config.attention_enabled_layers.iter().copied().collect();
        let entity_layer = layers
            .pop()
            .ok_or_else(|| Error::InvalidConfig("no attention-enabled layers".into()))?;
        let relation_layer = layers
            .pop()
            .ok_or_else(|| Error::InvalidConfig("need two attention-enabled layers".into()))?;
        let context_layer = layers.first().copied().filter(|&l| l == 0);
        Ok(CircuitLayout {
            context_layer,
            relation_layer,
            entity_layer,
        })
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let enabled = &config.attention_enabled_layers;
        let mut roles = vec![self.relation_layer, self.entity_layer];
        roles.extend(self.context_layer);
        for &l in &roles {
            if !enabled.contains(&l) {
                return Err(Error::InvalidPlant(format!(
                    "circuit layer {l} is not attention-enabled"
                )));
            }
        }
        roles.sort_unstable();
        roles.dedup();
        if roles.len() != 2 + usize::from(self.context_layer.is_some()) {
            return Err(Error::InvalidPlant("circuit roles must use distinct layers".into()));
        }
        Ok(())
    }

    /// Lowest layer at which a fact neuron sees both gathered signals.
    pub fn first_fact_layer(&self) -> usize {
        self.relation_layer.max(self.entity_layer)
    }
}

/// Construction constants. Defaults are tuned so every planted circuit has
/// a wide margin at `noise_scale` up to ~0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantGains {
    /// Weight of the entity component shared by all of its surface forms.
    pub alias_share: f64,
    /// Weight of the relation component in trigger-token embeddings.
    pub relation_share: f64,
    /// Channel value of a planted cell on its entity.
    pub cell_activation: f64,
    pub cell_gate_gain: f64,
    /// Gate threshold as a fraction of `alias_share`.
    pub cell_gate_threshold: f64,
    pub context_mix: f64,
    /// Pre-softmax score of a flagged position in the gather heads.
    pub gather_sharpness: f64,
    pub fact_gain: f64,
    pub fact_threshold: f64,
    pub two_cell_fact_gain: f64,
    pub two_cell_fact_threshold: f64,
    pub detector_gain: f64,
    pub answer_gain: f64,
    pub prior_gain: f64,
    /// Base noise gain on distractor value paths.
    pub distractor_noise: f64,
}

impl Default for PlantGains {
    fn default() -> Self {
        PlantGains {
            alias_share: 0.8,
            relation_share: 0.8,
            cell_activation: 4.0,
            cell_gate_gain: 20.0,
            cell_gate_threshold: 0.6,
            context_mix: 1.0,
            gather_sharpness: 12.0,
            fact_gain: 16.0,
            fact_threshold: 2.5,
            two_cell_fact_gain: 32.0,
            two_cell_fact_threshold: 2.75,
            detector_gain: 16.0,
            answer_gain: 10.0,
            prior_gain: 4.0,
            distractor_noise: 4.0,
        }
    }
}

impl PlantSpec {
    pub fn empty(layout: CircuitLayout) -> Self {
        PlantSpec {
            entities: Vec::new(),
            relations: Vec::new(),
            facts: Vec::new(),
            distractors: Vec::new(),
            prior_tokens: Vec::new(),
            layout,
            gains: PlantGains::default(),
        }
    }

    pub fn entity(&self, entity_id: &str) -> Option<&EntityPlant> {
        self.entities.iter().find(|e| e.entity_id == entity_id)
    }

    /// Number of orthonormal semantic slots the build needs.
    pub fn semantic_dims(&self) -> usize {
        let two_cell = self.entities.iter().filter(|e| e.second_cell.is_some()).count();
        2 + 2 * self.entities.len() + 2 * two_cell + self.relations.len()
    }
}
