//! Evaluation items: a question, its answer choices and the gold index.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{self, RecordError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ItemError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("item {0}: needs at least two choices")]
    TooFewChoices(String),
    #[error("item {0}: empty choice string")]
    EmptyChoice(String),
    #[error("item {item_id}: answer_index {answer_index} out of range for {choices} choices")]
    AnswerOutOfRange {
        item_id: String,
        answer_index: usize,
        choices: usize,
    },
    #[error("duplicate item_id {0}")]
    Duplicate(String),
}

impl EvalItem {
    pub fn validate(&self) -> Result<(), ItemError> {
        if self.choices.len() < 2 {
            return Err(ItemError::TooFewChoices(self.item_id.clone()));
        }
        if self.choices.iter().any(String::is_empty) {
            return Err(ItemError::EmptyChoice(self.item_id.clone()));
        }
        if self.answer_index >= self.choices.len() {
            return Err(ItemError::AnswerOutOfRange {
                item_id: self.item_id.clone(),
                answer_index: self.answer_index,
                choices: self.choices.len(),
            });
        }
        Ok(())
    }

    pub fn answer(&self) -> &str {
        &self.choices[self.answer_index]
    }

    /// Subject and object strings, when both are present and non-empty.
    pub fn entity_pair(&self) -> Option<(&str, &str)> {
        match (self.subject.as_deref(), self.object.as_deref()) {
            (Some(s), Some(o)) if !s.is_empty() && !o.is_empty() => Some((s, o)),
            _ => None,
        }
    }
}

pub fn load_items(path: &Path) -> Result<Vec<EvalItem>, ItemError> {
    let items: Vec<EvalItem> = io::read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for item in &items {
        item.validate()?;
        if !seen.insert(item.item_id.as_str()) {
            return Err(ItemError::Duplicate(item.item_id.clone()));
        }
    }
    Ok(items)
}

pub fn write_items(path: &Path, items: &[EvalItem]) -> Result<(), RecordError> {
    io::write_jsonl(path, items)
}
