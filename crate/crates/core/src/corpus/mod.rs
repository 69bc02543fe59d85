//! Word-level tokenization, prompt templates, and the entity inventory.

mod inventory;
mod prompts;
mod toy;
mod vocab;

pub use inventory::{load_inventory, EntityRecord, Inventory, QaRecord, VariantKind, Variants};
pub use prompts::{
    baseline_texts, baseline_words, cloze_wrap, fact_text, generate_baseline_prompts,
    generate_localization_prompts, locate_entity_span, localization_templates, placeholder_swap,
    qa_wrap, relation_info, relation_triggers, stable_hash, template_choice, PromptBundle,
    PromptKind, RelationInfo, Span, Template, ATTRIBUTES, DEFAULT_BASELINE_COUNT, ENTITY_SLOT,
    PRIOR_WORDS, QA_PREFIX_LEN, RELATIONS,
};
pub use toy::{toy_inventory, unknown_names, TOY_INVENTORY_SIZE, TOY_SEED, UNKNOWN_NAME_COUNT};
pub use vocab::{
    detokenize, tokenize, Vocabulary, ANSWER, FACT, NEWLINE, NEWLINE_ID, PLACEHOLDER,
    PLACEHOLDER_ID, PUNCTUATION, QUESTION, RESERVED,
};

/// Every word any prompt of the lab can contain for this inventory.
pub fn build_vocabulary<S: AsRef<str>>(
    inventory: &Inventory,
    unknown_names: &[String],
    extra_texts: &[S],
) -> Vocabulary {
    let mut texts: Vec<String> = Vec::new();
    texts.extend(ATTRIBUTES.iter().map(|a| a.to_string()));
    texts.extend(baseline_words());
    texts.extend(PRIOR_WORDS.iter().map(|w| w.to_string()));
    for r in RELATIONS {
        texts.push(r.question.replace(ENTITY_SLOT, ""));
        texts.push(fact_text(r.name, ""));
        texts.extend(r.triggers.iter().map(|t| t.to_string()));
    }
    for e in inventory.entities() {
        texts.extend(e.surface_forms().iter().map(|f| f.to_string()));
        for qa in &e.qa {
            texts.push(qa.question.clone());
            texts.extend(qa.answers.iter().cloned());
            texts.push(fact_text(&qa.relation, ""));
            texts.extend(relation_triggers(&qa.relation));
        }
    }
    texts.extend(unknown_names.iter().cloned());
    texts.extend(extra_texts.iter().map(|t| t.as_ref().to_string()));
    Vocabulary::build(texts)
}
