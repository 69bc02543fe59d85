use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Surface-form variant families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Spelling,
    Acronym,
    Multilingual,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [
        VariantKind::Spelling,
        VariantKind::Acronym,
        VariantKind::Multilingual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Spelling => "spelling",
            VariantKind::Acronym => "acronym",
            VariantKind::Multilingual => "multilingual",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant kind `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variants {
    #[serde(default)]
    pub spelling: Vec<String>,
    #[serde(default)]
    pub acronym: Vec<String>,
    #[serde(default)]
    pub multilingual: Vec<String>,
}

impl Variants {
    pub fn of_kind(&self, kind: VariantKind) -> &[String] {
        match kind {
            VariantKind::Spelling => &self.spelling,
            VariantKind::Acronym => &self.acronym,
            VariantKind::Multilingual => &self.multilingual,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.spelling
            .iter()
            .chain(&self.acronym)
            .chain(&self.multilingual)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub answers: Vec<String>,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub canonical: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub variants: Variants,
    #[serde(default)]
    pub popularity: u64,
    #[serde(default)]
    pub qa: Vec<QaRecord>,
}

impl EntityRecord {
    /// Canonical name followed by aliases: the forms used to find the
    /// entity in a question.
    pub fn names(&self) -> Vec<&str> {
        std::iter::once(self.canonical.as_str())
            .chain(self.aliases.iter().map(String::as_str))
            .collect()
    }

    /// Every surface form: canonical, aliases, then all variants.
    pub fn surface_forms(&self) -> Vec<&str> {
        let mut out = self.names();
        out.extend(self.variants.all().map(String::as_str));
        out
    }
}

/// The entity inventory, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inventory {
    entities: Vec<EntityRecord>,
}

impl Inventory {
    pub fn new(entities: Vec<EntityRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entities.iter().enumerate() {
            validate_record(e).map_err(|reason| Error::MalformedRecord { line: i + 1, reason })?;
            if !seen.insert(e.entity_id.as_str()) {
                return Err(Error::DuplicateEntity(e.entity_id.clone()));
            }
        }
        Ok(Inventory { entities })
    }

    /// Parses JSON lines, one entity per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entities = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EntityRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
            validate_record(&record).map_err(|reason| Error::MalformedRecord { line: i + 1, reason })?;
            if !seen.insert(record.entity_id.clone()) {
                return Err(Error::DuplicateEntity(record.entity_id));
            }
            entities.push(record);
        }
        Ok(Inventory { entities })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entities {
            out.push_str(&serde_json::to_string(e).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.entities.iter().find(|e| e.entity_id == entity_id)
    }

    pub fn position(&self, entity_id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.entity_id == entity_id)
    }

    /// Subset in the given order.
    pub fn select(&self, ids: &[&str]) -> Result<Inventory> {
        let entities = ids
            .iter()
            .map(|id| self.get(id).cloned().ok_or_else(|| Error::UnknownEntity(id.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Inventory::new(entities)
    }

    /// The first `n` entities.
    pub fn take(&self, n: usize) -> Inventory {
        Inventory {
            entities: self.entities.iter().take(n).cloned().collect(),
        }
    }
}

fn validate_record(e: &EntityRecord) -> std::result::Result<(), String> {
    if e.entity_id.trim().is_empty() {
        return Err("empty entity_id".into());
    }
    if e.canonical.trim().is_empty() {
        return Err(format!("entity `{}` has an empty canonical name", e.entity_id));
    }
    if let Some(form) = e.surface_forms().into_iter().find(|f| f.trim().is_empty()) {
        return Err(format!("entity `{}` has an empty surface form {form:?}", e.entity_id));
    }
    for qa in &e.qa {
        if qa.answers.is_empty() || qa.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(format!(
                "entity `{}`: question {:?} needs nonempty answers",
                e.entity_id, qa.question
            ));
        }
    }
    Ok(())
}

pub fn load_inventory(path: &Path) -> Result<Inventory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Inventory::from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"entity_id":"e1","canonical":"Ada Lovelace","aliases":["Lovelace"],"variants":{"spelling":["Ada Lovelase"],"acronym":["AL"],"multilingual":[]},"popularity":3,"qa":[{"question":"Who is the spouse of Ada Lovelace?","answers":["William"],"relation":"spouse"}]}"#;

    #[test]
    fn parses_and_round_trips() {
        let inv = Inventory::from_jsonl(&format!("{LINE}\n\n")).unwrap();
        assert_eq!(inv.len(), 1);
        let e = &inv.entities()[0];
        assert_eq!(e.surface_forms(), vec!["Ada Lovelace", "Lovelace", "Ada Lovelase", "AL"]);
        assert_eq!(Inventory::from_jsonl(&inv.to_jsonl()).unwrap(), inv);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        let dup = format!("{LINE}\n{LINE}\n");
        assert!(matches!(Inventory::from_jsonl(&dup), Err(Error::DuplicateEntity(_))));
        let bad = format!("{LINE}\n{{\"entity_id\": 3}}\n");
        assert!(matches!(
            Inventory::from_jsonl(&bad),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        let empty = LINE.replace("\"Ada Lovelace\",\"aliases\"", "\"\",\"aliases\"");
        assert!(matches!(Inventory::from_jsonl(&empty), Err(Error::MalformedRecord { .. })));
    }
}
