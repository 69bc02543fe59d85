//! Turns an entity inventory into a planted organism plus everything the
//! analysis stages need to address it: vocabulary, names, and prompts.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocabulary, fact_text, generate_baseline_prompts, generate_localization_prompts,
    localization_templates, qa_wrap, relation_triggers, tokenize, unknown_names, EntityRecord,
    Inventory, PromptBundle, QaRecord, VariantKind, Vocabulary, PRIOR_WORDS, UNKNOWN_NAME_COUNT,
};
use crate::error::{Error, Result};
use crate::metrics::{first_token_targets, AnswerTargets};
use crate::organism::{
    build_organism, CircuitLayout, DistractorPlant, EntityPlant, FactPlant, ModelConfig, NeuronId,
    Organism, PlantGains, PlantSpec, RelationPlant, TokenId,
};

/// How an inventory is planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_layers: usize,
    pub mlp_width: usize,
    /// Dimensions left for token content; the hidden size is this plus the
    /// semantic slots the plant needs.
    pub token_dims: usize,
    pub attention_layers: Vec<usize>,
    pub seed: u64,
    pub noise_scale: f64,
    /// Entity cells are spread round-robin over these layers.
    pub cell_layers: Vec<usize>,
    /// Fact neurons are spread round-robin over these layers; empty means
    /// every layer from the first usable one up.
    pub fact_layers: Vec<usize>,
    pub distractors_per_entity: usize,
    pub distractor_consistency: f64,
    /// Entities encoded jointly by two cells.
    pub two_cell_entities: Vec<String>,
    /// Variant kinds whose surface forms also fire the entity's cell.
    pub planted_variants: Vec<VariantKind>,
    pub gains: PlantGains,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_layers: 8,
            mlp_width: 192,
            token_dims: 96,
            attention_layers: vec![0, 3, 4],
            seed: 7,
            noise_scale: 0.05,
            cell_layers: vec![0, 1, 2],
            fact_layers: Vec::new(),
            distractors_per_entity: 1,
            distractor_consistency: 0.5,
            two_cell_entities: Vec::new(),
            planted_variants: VariantKind::ALL.to_vec(),
            gains: PlantGains::default(),
        }
    }
}

/// A planted organism together with the inventory it encodes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub inventory: Inventory,
    pub vocab: Vocabulary,
    /// Never-planted names used as the unknown-entity anchor.
    pub unknown_names: Vec<String>,
    pub organism: Organism,
}

fn last_token(vocab: &Vocabulary, form: &str) -> Result<TokenId> {
    let words = tokenize(form);
    let last = words.last().ok_or(Error::EmptyInput("surface form"))?;
    vocab.id(last).ok_or_else(|| Error::UnknownWord(last.clone()))
}

fn word_id(vocab: &Vocabulary, w: &str) -> Result<TokenId> {
    vocab.id(w).ok_or_else(|| Error::UnknownWord(w.to_string()))
}

/// Builds the plant spec for `inventory` under `config`.
pub fn plan(inventory: &Inventory, vocab: &Vocabulary, config: &ScenarioConfig) -> Result<(ModelConfig, PlantSpec)> {
    if inventory.is_empty() {
        return Err(Error::EmptyInput("inventory"));
    }
    if config.cell_layers.is_empty() {
        return Err(Error::InvalidConfig("no cell layers".into()));
    }
    let layer_lists = [
        ("cell", &config.cell_layers),
        ("fact", &config.fact_layers),
        ("attention", &config.attention_layers),
    ];
    for (what, layers) in layer_lists {
        if let Some(&l) = layers.iter().find(|&&l| l >= config.num_layers) {
            return Err(Error::InvalidConfig(format!(
                "{what} layer {l} outside a {}-layer organism",
                config.num_layers
            )));
        }
    }
    let mut model = ModelConfig::new(config.num_layers, 0, config.mlp_width, vocab.len())
        .with_seed(config.seed)
        .with_noise(config.noise_scale);
    model.attention_enabled_layers = config.attention_layers.iter().copied().collect();
    let layout = CircuitLayout::default_for(&model)?;
    let mut spec = PlantSpec::empty(layout);
    spec.gains = config.gains.clone();

    for id in &config.two_cell_entities {
        if inventory.get(id).is_none() {
            return Err(Error::UnknownEntity(id.clone()));
        }
    }
    let two_cell: BTreeSet<&str> = config.two_cell_entities.iter().map(String::as_str).collect();
    let mut used: BTreeSet<NeuronId> = BTreeSet::new();
    let mut next_neuron: BTreeMap<usize, usize> = BTreeMap::new();
    let mut take = |layer: usize, used: &mut BTreeSet<NeuronId>| -> Result<NeuronId> {
        let n = next_neuron.entry(layer).or_insert(0);
        while used.contains(&NeuronId::new(layer, *n)) {
            *n += 1;
        }
        if *n >= config.mlp_width {
            return Err(Error::CapacityExceeded(format!("cell layer {layer} is full")));
        }
        let id = NeuronId::new(layer, *n);
        used.insert(id);
        Ok(id)
    };

    for (i, e) in inventory.entities().iter().enumerate() {
        let layer = config.cell_layers[i % config.cell_layers.len()];
        let mut forms: Vec<&str> = e.names();
        for kind in &config.planted_variants {
            forms.extend(e.variants.of_kind(*kind).iter().map(String::as_str));
        }
        let mut detector_tokens = Vec::new();
        for form in forms {
            let t = last_token(vocab, form)?;
            if !detector_tokens.contains(&t) {
                detector_tokens.push(t);
            }
        }
        let cell = take(layer, &mut used)?;
        let second_cell = if two_cell.contains(e.entity_id.as_str()) {
            Some(take(layer, &mut used)?)
        } else {
            None
        };
        spec.entities.push(EntityPlant {
            entity_id: e.entity_id.clone(),
            detector_tokens,
            cell,
            second_cell,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd157_4ac7);
    if !(0.0..1.0).contains(&config.distractor_consistency) {
        return Err(Error::InvalidConfig(format!(
            "distractor consistency {} not in [0, 1)",
            config.distractor_consistency
        )));
    }
    let all_layers: Vec<usize> = (0..config.num_layers).collect();
    for e in inventory.entities() {
        for _ in 0..config.distractors_per_entity {
            let layer = *all_layers.choose(&mut rng).expect("num_layers >= 3");
            let free: Vec<usize> = (0..config.mlp_width)
                .filter(|&n| !used.contains(&NeuronId::new(layer, n)))
                .collect();
            let neuron = *free
                .choose(&mut rng)
                .ok_or_else(|| Error::CapacityExceeded(format!("no room for a distractor in layer {layer}")))?;
            let id = NeuronId::new(layer, neuron);
            used.insert(id);
            spec.distractors.push(DistractorPlant {
                entity_id: e.entity_id.clone(),
                neuron: id,
                consistency: config.distractor_consistency,
            });
        }
    }

    let relations: BTreeSet<&str> = inventory
        .entities()
        .iter()
        .flat_map(|e| e.qa.iter().map(|q| q.relation.as_str()))
        .collect();
    for &r in &relations {
        let tokens = relation_triggers(r)
            .iter()
            .map(|w| word_id(vocab, w))
            .collect::<Result<Vec<_>>>()?;
        spec.relations.push(RelationPlant {
            name: r.to_string(),
            tokens,
        });
    }

    let fact_layers: Vec<usize> = if config.fact_layers.is_empty() {
        (layout.first_fact_layer()..config.num_layers).collect()
    } else {
        config.fact_layers.clone()
    };
    if fact_layers.is_empty() {
        return Err(Error::InvalidConfig("no layer can hold facts".into()));
    }
    // Two-cell entities combine their halves at the entity-gather layer, so
    // their facts must read above it.
    let upper_layers: Vec<usize> = fact_layers.iter().copied().filter(|&l| l > layout.entity_layer).collect();
    if !two_cell.is_empty() && upper_layers.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "two-cell entities need a fact layer above layer {}",
            layout.entity_layer
        )));
    }
    let mut count = 0;
    for e in inventory.entities() {
        let layers = if two_cell.contains(e.entity_id.as_str()) {
            &upper_layers
        } else {
            &fact_layers
        };
        let mut seen = BTreeSet::new();
        for qa in &e.qa {
            if !seen.insert(qa.relation.as_str()) {
                continue;
            }
            let answer = &qa.answers[0];
            let answer_token = *first_token_targets(&[answer], vocab)?
                .ids()
                .collect::<Vec<_>>()
                .first()
                .expect("nonempty targets");
            spec.facts.push(FactPlant {
                entity_id: e.entity_id.clone(),
                relation: qa.relation.clone(),
                answer_token,
                layer: layers[count % layers.len()],
            });
            count += 1;
        }
    }
    spec.prior_tokens = PRIOR_WORDS
        .iter()
        .map(|w| word_id(vocab, w))
        .collect::<Result<_>>()?;

    model.hidden_dim = config.token_dims + spec.semantic_dims();
    Ok((model, spec))
}

impl Scenario {
    /// Plants `inventory`. `extra_texts` extend the vocabulary (e.g. probe
    /// prompts that use words outside the inventory).
    pub fn build<S: AsRef<str>>(inventory: Inventory, config: ScenarioConfig, extra_texts: &[S]) -> Result<Self> {
        let unknown = unknown_names(&inventory, config.seed, UNKNOWN_NAME_COUNT)?;
        let vocab = build_vocabulary(&inventory, &unknown, extra_texts);
        let (model, spec) = plan(&inventory, &vocab, &config)?;
        let organism = build_organism(model, spec)?;
        Ok(Scenario {
            config,
            inventory,
            vocab,
            unknown_names: unknown,
            organism,
        })
    }

    /// Rebinds an already built organism (e.g. a loaded checkpoint) to its
    /// inventory. The vocabulary must match the one the organism was built with.
    pub fn from_organism<S: AsRef<str>>(
        inventory: Inventory,
        config: ScenarioConfig,
        organism: Organism,
        extra_texts: &[S],
    ) -> Result<Self> {
        let unknown = unknown_names(&inventory, config.seed, UNKNOWN_NAME_COUNT)?;
        let vocab = build_vocabulary(&inventory, &unknown, extra_texts);
        if vocab.len() != organism.vocab_size() {
            return Err(Error::DimensionMismatch(format!(
                "inventory vocabulary has {} words, organism {}",
                vocab.len(),
                organism.vocab_size()
            )));
        }
        Ok(Scenario {
            config,
            inventory,
            vocab,
            unknown_names: unknown,
            organism,
        })
    }

    pub fn entity(&self, entity_id: &str) -> Result<&EntityRecord> {
        self.inventory
            .get(entity_id)
            .ok_or_else(|| Error::UnknownEntity(entity_id.to_string()))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.vocab.encode(text)
    }

    /// Token sequences of the canonical name and aliases.
    pub fn name_tokens(&self, entity_id: &str) -> Result<Vec<Vec<TokenId>>> {
        self.entity(entity_id)?
            .names()
            .iter()
            .map(|n| self.encode(n))
            .collect()
    }

    /// K localization prompts for `surface_form`, with templates chosen by
    /// `entity_id` so all surface forms of one entity share templates.
    pub fn localization_prompts(&self, entity_id: &str, surface_form: &str, k: usize) -> Result<PromptBundle> {
        let form = self.encode(surface_form)?;
        generate_localization_prompts(entity_id, &form, &localization_templates(), k, self.config.seed, &self.vocab)
    }

    pub fn canonical_prompts(&self, entity_id: &str, k: usize) -> Result<PromptBundle> {
        let canonical = self.entity(entity_id)?.canonical.clone();
        self.localization_prompts(entity_id, &canonical, k)
    }

    pub fn baseline_prompts(&self, count: usize) -> Result<PromptBundle> {
        generate_baseline_prompts(count, self.config.seed, &self.vocab)
    }

    pub fn answer_targets(&self, qa: &QaRecord) -> Result<AnswerTargets> {
        first_token_targets(&qa.answers, &self.vocab)
    }

    /// `Question: <q>\nAnswer:` tokens for a QA record.
    pub fn qa_prompt(&self, qa: &QaRecord) -> Result<Vec<TokenId>> {
        qa_wrap(&self.encode(&qa.question)?, &self.vocab)
    }

    /// Fact-style probe for an entity's first QA relation, naming the entity
    /// by `name`, with the answer targets of that record.
    pub fn fact_probe(&self, entity_id: &str, name: &str) -> Result<(Vec<TokenId>, AnswerTargets)> {
        let qa = self
            .entity(entity_id)?
            .qa
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("entity `{entity_id}` has no QA records")))?;
        let prompt = self.encode(&fact_text(&qa.relation, name))?;
        Ok((prompt, self.answer_targets(qa)?))
    }

    /// Planted entities in inventory order.
    pub fn entity_ids(&self) -> Vec<&str> {
        self.inventory.entities().iter().map(|e| e.entity_id.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy_inventory;

    #[test]
    fn plan_is_deterministic_and_spreads_cells() {
        let inv = toy_inventory().take(12);
        let cfg = ScenarioConfig::default();
        let a = Scenario::build::<&str>(inv.clone(), cfg.clone(), &[]).unwrap();
        let b = Scenario::build::<&str>(inv, cfg, &[]).unwrap();
        assert_eq!(a.organism.fingerprint(), b.organism.fingerprint());
        let layers: BTreeSet<usize> = a
            .organism
            .ground_truth()
            .planted_cells
            .values()
            .map(|c| c.layer)
            .collect();
        assert_eq!(layers, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn unknown_two_cell_entity_rejected() {
        let cfg = ScenarioConfig {
            two_cell_entities: vec!["nobody".into()],
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            Scenario::build::<&str>(toy_inventory().take(4), cfg, &[]),
            Err(Error::UnknownEntity(_))
        ));
    }
}
