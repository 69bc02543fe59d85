//! Deterministic generator for the shipped toy inventory.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::inventory::{EntityRecord, Inventory, QaRecord, Variants};
use super::prompts::{relation_info, Template, ATTRIBUTES, PRIOR_WORDS, RELATIONS};
use super::vocab::tokenize;
use crate::error::{Error, Result};

pub const TOY_INVENTORY_SIZE: usize = 200;
pub const TOY_SEED: u64 = 7;
pub const UNKNOWN_NAME_COUNT: usize = 5;

/// Relations given to generated entities.
const PERSON_RELATIONS: [&str; 6] = ["spouse", "place of birth", "occupation", "country", "sport", "genre"];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "", "n", "r", "s", "l"];

/// Letter-by-letter transliteration; injective on the generator alphabet.
fn to_cyrillic(word: &str) -> String {
    word.chars()
        .map(|c| {
            let upper = c.is_uppercase();
            let t = match c.to_ascii_lowercase() {
                'a' => 'а',
                'b' => 'б',
                'd' => 'д',
                'e' => 'е',
                'f' => 'ф',
                'g' => 'г',
                'i' => 'и',
                'k' => 'к',
                'l' => 'л',
                'm' => 'м',
                'n' => 'н',
                'o' => 'о',
                'p' => 'п',
                'r' => 'р',
                's' => 'с',
                't' => 'т',
                'u' => 'у',
                'v' => 'в',
                'z' => 'з',
                other => other,
            };
            if upper {
                t.to_uppercase().next().unwrap_or(t)
            } else {
                t
            }
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn syllable(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}{}{}",
        ONSETS.choose(rng).expect("nonempty"),
        VOWELS.choose(rng).expect("nonempty"),
        CODAS.choose(rng).expect("nonempty")
    )
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    capitalize(&(0..syllables).map(|_| syllable(rng)).collect::<String>())
}

/// Hands out generated words that collide with nothing handed out before.
struct WordSource {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl WordSource {
    fn new(seed: u64, taken: impl IntoIterator<Item = String>) -> Self {
        WordSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: taken.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    fn reserve(&mut self, w: &str) -> bool {
        self.used.insert(w.to_lowercase())
    }

    fn fresh(&mut self, syllables: usize) -> String {
        loop {
            let w = word(&mut self.rng, syllables);
            if w.len() >= 3 && self.reserve(&w) {
                return w;
            }
        }
    }
}

/// Misspells by doubling the first consonant after the first vowel, or
/// appending `h` when there is none.
fn misspell(surname: &str) -> String {
    let chars: Vec<char> = surname.chars().collect();
    let first_vowel = chars.iter().position(|c| "aeiou".contains(*c));
    if let Some(v) = first_vowel {
        if let Some(i) = (v + 1..chars.len()).find(|&i| !"aeiou".contains(chars[i])) {
            let mut out: String = chars[..=i].iter().collect();
            out.push(chars[i]);
            out.extend(&chars[i + 1..]);
            return out;
        }
    }
    format!("{surname}h")
}

fn anchors() -> Vec<EntityRecord> {
    let qa = |q: &str, answers: &[&str], relation: &str| QaRecord {
        question: q.to_string(),
        answers: answers.iter().map(|a| a.to_string()).collect(),
        relation: relation.to_string(),
    };
    let strings = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        EntityRecord {
            entity_id: "Q76".into(),
            canonical: "Barack Obama".into(),
            aliases: strings(&["Obama", "President Obama"]),
            variants: Variants {
                spelling: strings(&["Barak Obama", "Barack Obamma"]),
                acronym: strings(&["BHO"]),
                multilingual: strings(&["Барак Обама"]),
            },
            popularity: 1000,
            qa: vec![
                qa("Who is the wife of Barack Obama?", &["Michelle", "Michelle Obama"], "spouse"),
                qa("Where was Barack Obama born?", &["Hawaii", "Honolulu"], "place of birth"),
                qa("Which party does Barack Obama belong to?", &["Democratic", "Democratic Party"], "party"),
                qa("What office has Barack Obama served in?", &["President"], "office"),
                qa("Who are the daughters of Barack Obama?", &["Malia", "Sasha"], "children"),
                qa("Who was the vice president of Barack Obama?", &["Joe Biden", "Biden"], "vice president"),
                qa("Which memoir did Barack Obama write?", &["Dreams from My Father"], "memoir"),
            ],
        },
        EntityRecord {
            entity_id: "Q207".into(),
            canonical: "George Bush".into(),
            aliases: strings(&["Bush", "George W Bush"]),
            variants: Variants {
                spelling: strings(&["George Busch"]),
                acronym: strings(&["GWB"]),
                multilingual: strings(&["Джордж Буш"]),
            },
            popularity: 800,
            qa: vec![
                qa("Who is the wife of George Bush?", &["Laura", "Laura Bush"], "spouse"),
                qa("What is the occupation of George Bush?", &["Governor"], "occupation"),
            ],
        },
        EntityRecord {
            entity_id: "Q22686".into(),
            canonical: "Donald Trump".into(),
            aliases: strings(&["Trump"]),
            variants: Variants {
                spelling: strings(&["Donald Trumpp"]),
                acronym: strings(&["DJT"]),
                multilingual: strings(&["Дональд Трамп"]),
            },
            popularity: 900,
            qa: vec![
                qa("Which party does Donald Trump belong to?", &["Republican", "Republican Party"], "party"),
                qa("Who is the wife of Donald Trump?", &["Melania"], "spouse"),
            ],
        },
    ]
}

/// Words generated names must avoid: template, relation, and prior words.
fn taken_words() -> Vec<String> {
    let mut out: Vec<String> = ATTRIBUTES.iter().flat_map(|a| tokenize(a)).collect();
    for r in RELATIONS {
        out.extend(r.triggers.iter().map(|t| t.to_string()));
        out.extend(tokenize(&r.question.replace("<entity>", "")));
    }
    out.extend(PRIOR_WORDS.iter().map(|w| w.to_string()));
    out.extend(super::prompts::baseline_words());
    for e in anchors() {
        for form in e.surface_forms() {
            out.extend(tokenize(form));
        }
        for qa in &e.qa {
            out.extend(qa.answers.iter().flat_map(|a| tokenize(a)));
        }
    }
    out
}

/// The shipped 200-entity inventory: three hand-written anchors followed by
/// generated people with two facts each and one variant of every kind.
pub fn toy_inventory() -> Inventory {
    let mut entities = anchors();
    let mut words = WordSource::new(TOY_SEED, taken_words());
    let mut acronyms: BTreeSet<String> = entities
        .iter()
        .flat_map(|e| e.variants.acronym.clone())
        .collect();
    let mut i = 0;
    while entities.len() < TOY_INVENTORY_SIZE {
        let first = words.fresh(2);
        let surname = words.fresh(3);
        let acronym = format!(
            "{}{}",
            &first[..1],
            surname[..2].to_uppercase()
        );
        let misspelled = misspell(&surname);
        let translit = to_cyrillic(&surname);
        if !acronyms.insert(acronym.clone())
            || !words.reserve(&misspelled)
            || !words.reserve(&acronym)
            || !words.reserve(&translit)
        {
            continue;
        }
        i += 1;
        let canonical = format!("{first} {surname}");
        let mut relations = PERSON_RELATIONS.to_vec();
        relations.shuffle(&mut words.rng);
        let qa = relations[..2]
            .iter()
            .map(|&rel| {
                let info = relation_info(rel).expect("known relation");
                let syllables = 2 + usize::from(words.rng.random_bool(0.5));
                let answer = words.fresh(syllables);
                let answers = if rel == "spouse" {
                    vec![answer.clone(), format!("{answer} {surname}")]
                } else {
                    vec![answer]
                };
                QaRecord {
                    question: Template::parse(info.question)
                        .expect("relation templates have a slot")
                        .fill_text(&canonical),
                    answers,
                    relation: rel.to_string(),
                }
            })
            .collect();
        entities.push(EntityRecord {
            entity_id: format!("T{i:03}"),
            canonical,
            aliases: vec![surname.clone()],
            variants: Variants {
                spelling: vec![format!("{first} {misspelled}")],
                acronym: vec![acronym],
                multilingual: vec![format!("{} {}", to_cyrillic(&first), translit)],
            },
            popularity: words.rng.random_range(1..=500),
            qa,
        });
    }
    Inventory::new(entities).expect("generated inventory is valid")
}

/// `count` seeded two-word names whose words appear nowhere in `inventory`.
pub fn unknown_names(inventory: &Inventory, seed: u64, count: usize) -> Result<Vec<String>> {
    let mut taken = taken_words();
    for e in inventory.entities() {
        for form in e.surface_forms() {
            taken.extend(tokenize(form));
        }
        for qa in &e.qa {
            taken.extend(tokenize(&qa.question));
            taken.extend(qa.answers.iter().flat_map(|a| tokenize(a)));
        }
    }
    let mut words = WordSource::new(seed ^ 0x5_eed0_f0dd_ba11, taken);
    let names: Vec<String> = (0..count)
        .map(|_| format!("{} {}", words.fresh(2), words.fresh(3)))
        .collect();
    if names.is_empty() {
        return Err(Error::EmptyInput("unknown names"));
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_inventory_shape() {
        let inv = toy_inventory();
        assert_eq!(inv.len(), TOY_INVENTORY_SIZE);
        assert_eq!(inv, toy_inventory());
        let mut last_tokens = BTreeSet::new();
        for e in inv.entities() {
            assert!(!e.qa.is_empty());
            for kind in super::super::VariantKind::ALL {
                assert!(!e.variants.of_kind(kind).is_empty(), "{} lacks {kind:?}", e.entity_id);
            }
            let own: BTreeSet<String> = e
                .surface_forms()
                .iter()
                .map(|f| tokenize(f).pop().unwrap())
                .collect();
            for t in own {
                assert!(last_tokens.insert(t.clone()), "last token {t} shared across entities");
            }
        }
    }

    #[test]
    fn unknown_names_avoid_inventory() {
        let inv = toy_inventory();
        let names = unknown_names(&inv, 7, UNKNOWN_NAME_COUNT).unwrap();
        assert_eq!(names.len(), UNKNOWN_NAME_COUNT);
        for n in &names {
            for w in tokenize(n) {
                assert!(inv
                    .entities()
                    .iter()
                    .all(|e| e.surface_forms().iter().all(|f| !tokenize(f).contains(&w))));
            }
        }
    }

    #[test]
    fn misspelling_differs() {
        assert_eq!(misspell("Torvan"), "Torrvan");
        assert_eq!(misspell("Aaa"), "Aaah");
    }
}
