use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocabulary, ANSWER, NEWLINE, PLACEHOLDER_ID, QUESTION};
use crate::error::{Error, Result};
use crate::organism::TokenId;

pub const ENTITY_SLOT: &str = "<entity>";

/// Localization attributes, one template `The <attribute> of <entity>` each.
pub const ATTRIBUTES: [&str; 100] = [
    "origin", "purpose", "definition", "function", "main goal", "age", "name", "founder", "owner",
    "value", "importance", "reputation", "impact", "influence", "location", "history", "status",
    "category", "type", "meaning", "significance", "role", "date of creation", "latest update",
    "duration", "size", "popularity", "main activity", "scope", "reach", "composition",
    "structure", "method", "strategy", "goal", "objective", "result", "effect", "outcome", "cause",
    "reason", "source", "destination", "trend", "main challenge", "opinion", "leading opinion",
    "common perception", "definition in law", "ethical standing", "main criticism",
    "key advantage", "key disadvantage", "limitation", "potential", "likelihood", "probability",
    "risk", "opportunity", "threat", "strength", "weakness", "main competitor", "main supporter",
    "main opponent", "relationship with others", "relevance", "timing", "frequency", "pattern",
    "cost", "budget", "revenue", "profit", "loss", "market share", "demographic",
    "representation", "policy", "regulation", "requirement", "recommendation", "limiting factor",
    "resource", "technology used", "process", "legal status", "acceptance", "approval",
    "recognition", "symbolism", "associations", "link to current events", "precedent",
    "measurement", "ranking", "priority", "main feature", "unique aspect", "distinguishing factor",
];

/// Words the organism's always-on prior neuron promotes; they fill the
/// top-k whenever no fact circuit fires.
pub const PRIOR_WORDS: [&str; 5] = ["unknown", "nobody", "unclear", "perhaps", "something"];

/// How a relation surfaces in text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationInfo {
    pub name: &'static str,
    /// Words that signal the relation; the first one appears in `phrase`.
    pub triggers: &'static [&'static str],
    /// Question template with an `<entity>` slot.
    pub question: &'static str,
    /// Noun phrase used in `Fact: the <phrase> of <entity>:`.
    pub phrase: &'static str,
}

pub const RELATIONS: [RelationInfo; 11] = [
    RelationInfo {
        name: "spouse",
        triggers: &["spouse", "wife", "husband", "married"],
        question: "Who is the spouse of <entity>?",
        phrase: "spouse",
    },
    RelationInfo {
        name: "place of birth",
        triggers: &["birthplace", "born"],
        question: "Where was <entity> born?",
        phrase: "birthplace",
    },
    RelationInfo {
        name: "party",
        triggers: &["party"],
        question: "Which party does <entity> belong to?",
        phrase: "party",
    },
    RelationInfo {
        name: "office",
        triggers: &["office", "served"],
        question: "What office has <entity> served in?",
        phrase: "office",
    },
    RelationInfo {
        name: "children",
        triggers: &["daughters", "daughter", "children"],
        question: "Who are the daughters of <entity>?",
        phrase: "daughters",
    },
    RelationInfo {
        name: "vice president",
        triggers: &["vice"],
        question: "Who was the vice president of <entity>?",
        phrase: "vice president",
    },
    RelationInfo {
        name: "memoir",
        triggers: &["memoir", "book"],
        question: "Which memoir did <entity> write?",
        phrase: "memoir",
    },
    RelationInfo {
        name: "occupation",
        triggers: &["occupation", "profession", "job"],
        question: "What is the occupation of <entity>?",
        phrase: "occupation",
    },
    RelationInfo {
        name: "country",
        triggers: &["country", "citizen"],
        question: "Which country is <entity> a citizen of?",
        phrase: "country",
    },
    RelationInfo {
        name: "sport",
        triggers: &["sport"],
        question: "Which sport does <entity> compete in?",
        phrase: "sport",
    },
    RelationInfo {
        name: "genre",
        triggers: &["genre"],
        question: "What genre is <entity> known for?",
        phrase: "genre",
    },
];

pub fn relation_info(name: &str) -> Option<&'static RelationInfo> {
    RELATIONS.iter().find(|r| r.name == name)
}

/// Trigger words for a relation; relations outside the built-in table
/// are triggered by the words of their own name.
pub fn relation_triggers(name: &str) -> Vec<String> {
    match relation_info(name) {
        Some(r) => r.triggers.iter().map(|t| t.to_string()).collect(),
        None => tokenize(name),
    }
}

/// Fact-style probe text: `Fact: the <phrase> of <entity>:`.
pub fn fact_text(relation: &str, entity: &str) -> String {
    let phrase = relation_info(relation).map_or(relation, |r| r.phrase);
    format!("Fact: the {phrase} of {entity}:")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Localization,
    Baseline,
    Qa,
    Cloze,
}

/// Tokenized prompts plus the read-out position of each: the entity's last
/// token for entity-bearing kinds, the final token for baselines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub prompts: Vec<Vec<TokenId>>,
    pub entity_positions: Vec<usize>,
}

impl PromptBundle {
    pub fn empty(kind: PromptKind) -> Self {
        PromptBundle {
            kind,
            prompts: Vec::new(),
            entity_positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[TokenId], usize)> {
        self.prompts
            .iter()
            .map(Vec::as_slice)
            .zip(self.entity_positions.iter().copied())
    }
}

/// Inclusive token span `[start, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub last: usize,
}

fn occurrences<'a>(prompt: &'a [TokenId], alias: &'a [TokenId]) -> impl Iterator<Item = usize> + 'a {
    let n = alias.len();
    (0..(prompt.len() + 1).saturating_sub(n)).filter(move |&s| n > 0 && prompt[s..s + n] == *alias)
}

/// Finds the entity span: the longest alias that occurs wins, and among
/// equally long aliases the leftmost occurrence. `t(x)` is `span.last`.
pub fn locate_entity_span(prompt: &[TokenId], aliases: &[Vec<TokenId>]) -> Result<Span> {
    if prompt.is_empty() {
        return Err(Error::EmptyInput("prompt"));
    }
    let mut best: Option<Span> = None;
    for alias in aliases {
        if let Some(start) = occurrences(prompt, alias).next() {
            let span = Span {
                start,
                last: start + alias.len() - 1,
            };
            best = match best {
                Some(b) => {
                    let (bl, sl) = (b.last - b.start, span.last - span.start);
                    if sl > bl || (sl == bl && span.start < b.start) {
                        Some(span)
                    } else {
                        Some(b)
                    }
                }
                None => Some(span),
            };
        }
    }
    best.ok_or(Error::NoSpanFound)
}

/// `Question: <q>\nAnswer:`
pub fn qa_wrap(question: &[TokenId], vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    let id = |w: &str| vocab.id(w).ok_or_else(|| Error::UnknownWord(w.to_string()));
    let mut out = vec![id(QUESTION)?];
    out.extend_from_slice(question);
    out.push(id(NEWLINE)?);
    out.push(id(ANSWER)?);
    Ok(out)
}

/// Offset of the question's first token inside [`qa_wrap`] output.
pub const QA_PREFIX_LEN: usize = 1;

/// Cloze prompts are the bare statement fragment.
pub fn cloze_wrap(fragment: &[TokenId]) -> Result<Vec<TokenId>> {
    if fragment.is_empty() {
        return Err(Error::EmptyInput("cloze fragment"));
    }
    Ok(fragment.to_vec())
}

/// Replaces the first occurrence of `alias` with the placeholder `X` and
/// returns the new sequence with the placeholder index.
pub fn placeholder_swap(question: &[TokenId], alias: &[TokenId]) -> Result<(Vec<TokenId>, usize)> {
    let start = occurrences(question, alias).next().ok_or(Error::AliasAbsent)?;
    let mut out = question[..start].to_vec();
    out.push(PLACEHOLDER_ID);
    out.extend_from_slice(&question[start + alias.len()..]);
    Ok((out, start))
}

/// A prompt template with one `<entity>` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    before: String,
    after: String,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let (before, after) = text
            .split_once(ENTITY_SLOT)
            .ok_or_else(|| Error::TemplateMissingSlot(text.to_string()))?;
        Ok(Template {
            before: before.to_string(),
            after: after.to_string(),
        })
    }

    pub fn localization(attribute: &str) -> Self {
        Template {
            before: format!("The {attribute} of "),
            after: String::new(),
        }
    }

    pub fn fill_text(&self, entity: &str) -> String {
        format!("{}{}{}", self.before, entity, self.after)
    }

    /// Token ids of the filled template and the index of the entity's last token.
    pub fn fill(&self, entity: &[TokenId], vocab: &Vocabulary) -> Result<(Vec<TokenId>, usize)> {
        if entity.is_empty() {
            return Err(Error::EmptyInput("entity tokens"));
        }
        let mut tokens = vocab.encode(&self.before)?;
        tokens.extend_from_slice(entity);
        let last = tokens.len() - 1;
        tokens.extend(vocab.encode(&self.after)?);
        Ok((tokens, last))
    }
}

pub fn localization_templates() -> Vec<Template> {
    ATTRIBUTES.iter().map(|a| Template::localization(a)).collect()
}

/// 64-bit FNV-1a, used to derive per-entity seeds from ids.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Indices of the `k` templates used for an entity: a seeded shuffle that
/// depends only on (seed, entity id), so every surface form of the entity
/// is probed with the same templates.
pub fn template_choice(entity_id: &str, template_count: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > template_count {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the {template_count} available templates"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(entity_id));
    let mut idx: Vec<usize> = (0..template_count).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    Ok(idx)
}

/// K localization prompts for one surface form of an entity.
pub fn generate_localization_prompts(
    entity_id: &str,
    surface_form: &[TokenId],
    templates: &[Template],
    k: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<PromptBundle> {
    let mut bundle = PromptBundle::empty(PromptKind::Localization);
    for i in template_choice(entity_id, templates.len(), k, seed)? {
        let (tokens, pos) = templates[i].fill(surface_form, vocab)?;
        bundle.prompts.push(tokens);
        bundle.entity_positions.push(pos);
    }
    Ok(bundle)
}

const BASELINE_SUBJECTS: [&str; 30] = [
    "The old bridge", "A quiet village", "The river", "The tall tower", "The morning train",
    "A small museum", "The city council", "The local bakery", "The main library",
    "A famous painting", "The northern forest", "The mountain road", "The harbor",
    "A busy market", "The school garden", "The ancient castle", "The new stadium",
    "The silver lake", "A wooden cabin", "The central square", "The evening news",
    "A long tunnel", "The stone church", "The green valley", "The winter festival",
    "The coastal highway", "A narrow street", "The public park", "The royal palace",
    "The science fair",
];

const BASELINE_PREDICATES: [&str; 20] = [
    "is located in", "was built by", "is known for", "is close to", "opened in",
    "is famous for", "was designed by", "is next to", "is visited by", "is owned by",
    "was renamed after", "is found near", "is popular with", "was restored in", "is part of",
    "was closed during", "is surrounded by", "was damaged by", "is managed by", "stands beside",
];

pub const DEFAULT_BASELINE_COUNT: usize = 399;

/// Every word the baseline generator can emit.
pub fn baseline_words() -> Vec<String> {
    BASELINE_SUBJECTS
        .iter()
        .chain(BASELINE_PREDICATES.iter())
        .flat_map(|s| tokenize(s))
        .collect()
}

/// `count` distinct generic cloze fragments, chosen by a seeded shuffle of
/// the subject × predicate grid.
pub fn baseline_texts(count: usize, seed: u64) -> Result<Vec<String>> {
    let total = BASELINE_SUBJECTS.len() * BASELINE_PREDICATES.len();
    if count == 0 || count > total {
        return Err(Error::InvalidArgument(format!(
            "baseline count must be in 1..={total}, got {count}"
        )));
    }
    let mut grid: Vec<(usize, usize)> = (0..BASELINE_SUBJECTS.len())
        .flat_map(|s| (0..BASELINE_PREDICATES.len()).map(move |p| (s, p)))
        .collect();
    grid.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(grid[..count]
        .iter()
        .map(|&(s, p)| format!("{} {}", BASELINE_SUBJECTS[s], BASELINE_PREDICATES[p]))
        .collect())
}

/// Baseline bundle read out at each prompt's final token.
pub fn generate_baseline_prompts(count: usize, seed: u64, vocab: &Vocabulary) -> Result<PromptBundle> {
    let mut bundle = PromptBundle::empty(PromptKind::Baseline);
    for text in baseline_texts(count, seed)? {
        let tokens = cloze_wrap(&vocab.encode(&text)?)?;
        bundle.entity_positions.push(tokens.len() - 1);
        bundle.prompts.push(tokens);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build([
            "The origin of Donald Trump",
            "Who is the spouse of OBAMA?",
            "a b c d e f",
        ])
    }

    #[test]
    fn span_of_multi_token_alias() {
        let v = vocab();
        let prompt = v.encode("The origin of Donald Trump").unwrap();
        let span = locate_entity_span(&prompt, &[v.encode("Donald Trump").unwrap()]).unwrap();
        assert_eq!(span, Span { start: 3, last: 4 });
        let whole = locate_entity_span(&prompt, std::slice::from_ref(&prompt)).unwrap();
        assert_eq!(whole.last, prompt.len() - 1);
        assert!(matches!(
            locate_entity_span(&prompt, &[v.encode("OBAMA").unwrap()]),
            Err(Error::NoSpanFound)
        ));
    }

    /// Brute force: all (alias, start) matches, longest first, then leftmost.
    fn scan(prompt: &[TokenId], aliases: &[Vec<TokenId>]) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for a in aliases.iter().filter(|a| !a.is_empty()) {
            for s in 0..prompt.len() {
                if s + a.len() <= prompt.len() && prompt[s..s + a.len()] == a[..] {
                    let better = match best {
                        None => true,
                        Some((len, start)) => a.len() > len || (a.len() == len && s < start),
                    };
                    if better {
                        best = Some((a.len(), s));
                    }
                }
            }
        }
        best.map(|(len, s)| s + len - 1)
    }

    #[test]
    fn span_matches_brute_force_on_all_placements() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let prompt: Vec<TokenId> = (0..6).map(|_| rng.random_range(0..4)).collect();
            let aliases: Vec<Vec<TokenId>> = (0..rng.random_range(1..4))
                .map(|_| {
                    let len = rng.random_range(1..4);
                    let start = rng.random_range(0..=6 - len);
                    if rng.random_bool(0.7) {
                        prompt[start..start + len].to_vec()
                    } else {
                        (0..len).map(|_| rng.random_range(0..4)).collect()
                    }
                })
                .collect();
            let got = locate_entity_span(&prompt, &aliases).ok().map(|s| s.last);
            assert_eq!(got, scan(&prompt, &aliases), "{prompt:?} {aliases:?}");
        }
    }

    #[test]
    fn placeholder_replaces_first_occurrence_only() {
        let v = vocab();
        let q = v.encode("Who is the spouse of OBAMA?").unwrap();
        let (swapped, t) = placeholder_swap(&q, &v.encode("OBAMA").unwrap()).unwrap();
        assert_eq!(v.decode(&swapped).unwrap(), "Who is the spouse of X?");
        assert_eq!(swapped[t], PLACEHOLDER_ID);

        let twice = v.encode("a b a c").unwrap();
        let (swapped, t) = placeholder_swap(&twice, &v.encode("a").unwrap()).unwrap();
        assert_eq!(t, 0);
        assert_eq!(v.decode(&swapped).unwrap(), "X b a c");
        assert!(matches!(
            placeholder_swap(&twice, &v.encode("f").unwrap()),
            Err(Error::AliasAbsent)
        ));
    }

    #[test]
    fn wrappers() {
        let v = vocab();
        let q = v.encode("Who is the spouse of OBAMA?").unwrap();
        let wrapped = qa_wrap(&q, &v).unwrap();
        assert_eq!(v.decode(&wrapped).unwrap(), "Question: Who is the spouse of OBAMA?\nAnswer:");
        assert_eq!(wrapped[QA_PREFIX_LEN..QA_PREFIX_LEN + q.len()], q[..]);
        assert!(cloze_wrap(&[]).is_err());
        assert!(matches!(Template::parse("The origin of"), Err(Error::TemplateMissingSlot(_))));
    }

    #[test]
    fn localization_prompts_are_deterministic() {
        let texts: Vec<String> = ATTRIBUTES.iter().map(|a| format!("The {a} of Trump")).collect();
        let v = Vocabulary::build(texts.iter());
        let trump = v.encode("Trump").unwrap();
        let templates = localization_templates();
        let a = generate_localization_prompts("t", &trump, &templates, 2, 7, &v).unwrap();
        assert_eq!(a, generate_localization_prompts("t", &trump, &templates, 2, 7, &v).unwrap());
        assert_eq!(a.len(), 2);
        for (p, pos) in a.iter() {
            assert_eq!(p[pos], trump[0]);
        }
        assert!(generate_localization_prompts("t", &trump, &templates, 0, 7, &v)
            .unwrap()
            .is_empty());
        assert!(generate_localization_prompts("t", &trump, &templates, 101, 7, &v).is_err());
    }

    #[test]
    fn baselines_are_distinct() {
        let texts = baseline_texts(DEFAULT_BASELINE_COUNT, 7).unwrap();
        let unique: std::collections::BTreeSet<_> = texts.iter().collect();
        assert_eq!(unique.len(), DEFAULT_BASELINE_COUNT);
        assert_eq!(baseline_texts(1, 7).unwrap().len(), 1);
        assert!(baseline_texts(0, 7).is_err());
    }
}
