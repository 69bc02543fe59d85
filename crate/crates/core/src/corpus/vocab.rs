use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::organism::TokenId;

pub const PLACEHOLDER: &str = "X";
pub const NEWLINE: &str = "\n";
pub const QUESTION: &str = "Question:";
pub const ANSWER: &str = "Answer:";
pub const FACT: &str = "Fact:";

/// Structural words with fixed ids 0..7, followed by punctuation.
pub const RESERVED: [&str; 7] = [PLACEHOLDER, NEWLINE, QUESTION, ANSWER, FACT, "The", "of"];
/// Trailing characters split off words into their own tokens.
pub const PUNCTUATION: [char; 5] = ['?', '.', ',', '!', ':'];

pub const PLACEHOLDER_ID: TokenId = 0;
pub const NEWLINE_ID: TokenId = 1;

fn is_punctuation(word: &str) -> bool {
    let mut chars = word.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

/// Splits text into word tokens: whitespace-separated words, trailing
/// punctuation split off (structural words such as `Question:` excepted),
/// and each newline as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            out.push(NEWLINE.to_string());
        }
        for word in line.split_whitespace() {
            let mut stem = word;
            let mut tail = Vec::new();
            while let Some(c) = stem.chars().last() {
                if !RESERVED.contains(&stem) && stem.len() > c.len_utf8() && PUNCTUATION.contains(&c) {
                    tail.push(c.to_string());
                    stem = &stem[..stem.len() - c.len_utf8()];
                } else {
                    break;
                }
            }
            out.push(stem.to_string());
            out.extend(tail.into_iter().rev());
        }
    }
    out
}

/// Inverse of [`tokenize`] on canonical text: single spaces between words,
/// punctuation attached to the preceding word, no spaces around newlines.
pub fn detokenize<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::new();
    let mut prev_newline = true;
    for word in words {
        let w = word.as_ref();
        let attach = w == NEWLINE || is_punctuation(w);
        if !prev_newline && !attach {
            out.push(' ');
        }
        out.push_str(w);
        prev_newline = w == NEWLINE;
    }
    out
}

/// Bijective word ↔ id table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Reserved words first, then punctuation, then every other word of
    /// `texts` in sorted order. Ids therefore depend only on the word set.
    pub fn build<I, S>(texts: I) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words: Vec<String> = RESERVED.iter().map(|w| w.to_string()).collect();
        words.extend(PUNCTUATION.iter().map(|c| c.to_string()));
        let fixed: BTreeSet<String> = words.iter().cloned().collect();
        let rest: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| tokenize(t.as_ref()))
            .filter(|w| !fixed.contains(w))
            .collect();
        words.extend(rest);
        Vocabulary::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        tokenize(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(Error::UnknownWord(w)))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.word(id).ok_or(Error::OutOfVocabulary {
                    id,
                    vocab: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(detokenize(&words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation_and_newlines() {
        assert_eq!(
            tokenize("Question: Who is the spouse of Barack Obama?\nAnswer:"),
            vec!["Question:", "Who", "is", "the", "spouse", "of", "Barack", "Obama", "?", "\n", "Answer:"]
        );
        assert_eq!(tokenize("Fact: the party of X:"), vec!["Fact:", "the", "party", "of", "X", ":"]);
        assert_eq!(tokenize("?"), vec!["?"]);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(["zebra apple", "Question: mango?"]);
        assert_eq!(v.id("X"), Some(PLACEHOLDER_ID));
        assert_eq!(v.id("\n"), Some(NEWLINE_ID));
        assert_eq!(v.id("Question:"), Some(2));
        assert_eq!(v.id("of"), Some(6));
        assert_eq!(v.id("?"), Some(7));
        assert!(v.id("apple").unwrap() < v.id("zebra").unwrap());
        assert_eq!(v, Vocabulary::build(["mango zebra", "apple"]));
    }

    #[test]
    fn unknown_word_is_an_error() {
        let v = Vocabulary::build(["alpha"]);
        assert!(matches!(v.encode("alpha beta"), Err(Error::UnknownWord(w)) if w == "beta"));
    }

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            4 => "[A-Za-zА-я]{1,6}",
            1 => Just("?".to_string()),
            1 => Just(",".to_string()),
            1 => Just("\n".to_string()),
            1 => Just("Answer:".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec(word(), 1..12)) {
            let text = detokenize(&words);
            prop_assert_eq!(tokenize(&text), words.clone());
            prop_assert_eq!(detokenize(&tokenize(&text)), text.clone());
            let vocab = Vocabulary::build([text.as_str()]);
            let ids = vocab.encode(&text).unwrap();
            prop_assert_eq!(vocab.decode(&ids).unwrap(), text);
        }
    }
}
