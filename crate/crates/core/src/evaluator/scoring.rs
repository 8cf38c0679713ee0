use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::io::{self, RecordError};
use crate::item::EvalItem;

/// Zero-shot cloze prompt. The question is inserted verbatim.
pub fn render_prompt(item: &EvalItem) -> Result<String, EvalError> {
    if item.question.trim().is_empty() {
        return Err(EvalError::EmptyQuestion(item.item_id.clone()));
    }
    Ok(format!("Question: {}\nAnswer:", item.question))
}

/// Log-likelihood of one answer choice as a continuation of the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScore {
    pub item_id: String,
    pub choice_index: usize,
    /// Sum of token log-probabilities of the choice.
    pub logprob: f64,
    pub num_tokens: usize,
    /// Unicode scalar values in the choice text.
    pub num_chars: usize,
    /// Log-probability of the choice after an answer-only context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_logprob: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Char,
    Pmi,
}

impl FromStr for Normalization {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalization::None),
            "char" => Ok(Normalization::Char),
            "pmi" => Ok(Normalization::Pmi),
            other => Err(EvalError::UnknownNormalization(other.to_string())),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::Char => "char",
            Normalization::Pmi => "pmi",
        })
    }
}

/// Index of the best choice under `norm`; ties go to the lowest index.
pub fn rank_choices(scores: &[ChoiceScore], norm: Normalization) -> Result<usize, EvalError> {
    let first = scores.first().ok_or_else(|| EvalError::TooFewChoices(String::new()))?;
    if scores.len() < 2 {
        return Err(EvalError::TooFewChoices(first.item_id.clone()));
    }
    let mut seen = BTreeSet::new();
    let mut best: Option<(usize, f64)> = None;
    for s in scores {
        if s.item_id != first.item_id {
            return Err(EvalError::MixedItems(first.item_id.clone(), s.item_id.clone()));
        }
        if !seen.insert(s.choice_index) {
            return Err(EvalError::DuplicateChoice {
                item_id: s.item_id.clone(),
                choice_index: s.choice_index,
            });
        }
        if s.num_tokens == 0 || s.num_chars == 0 || !s.logprob.is_finite() {
            return Err(EvalError::InvalidScore {
                item_id: s.item_id.clone(),
                choice_index: s.choice_index,
            });
        }
        let value = match norm {
            Normalization::None => s.logprob,
            Normalization::Char => s.logprob / s.num_chars as f64,
            Normalization::Pmi => {
                let prior = s.prior_logprob.ok_or_else(|| EvalError::MissingPrior {
                    item_id: s.item_id.clone(),
                    choice_index: s.choice_index,
                })?;
                if !prior.is_finite() {
                    return Err(EvalError::InvalidScore {
                        item_id: s.item_id.clone(),
                        choice_index: s.choice_index,
                    });
                }
                s.logprob - prior
            }
        };
        let better = match best {
            None => true,
            Some((idx, v)) => value > v || (value == v && s.choice_index < idx),
        };
        if better {
            best = Some((s.choice_index, value));
        }
    }
    Ok(best.expect("at least two scores").0)
}

/// Anything that can score the answer choices of an item.
pub trait ChoiceScorer {
    fn choice_scores(&self, item: &EvalItem) -> Result<Vec<ChoiceScore>, EvalError>;
}

/// Choice scores computed elsewhere and exchanged as line-delimited records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreFile {
    by_item: BTreeMap<String, Vec<ChoiceScore>>,
}

impl ScoreFile {
    pub fn from_scores(scores: Vec<ChoiceScore>) -> Self {
        let mut by_item: BTreeMap<String, Vec<ChoiceScore>> = BTreeMap::new();
        for s in scores {
            by_item.entry(s.item_id.clone()).or_default().push(s);
        }
        Self { by_item }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(Self::from_scores(io::read_jsonl(path)?))
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        io::write_jsonl(path, self.by_item.values().flatten())
    }

    pub fn has_priors(&self) -> bool {
        self.by_item.values().flatten().all(|s| s.prior_logprob.is_some())
    }
}

impl ChoiceScorer for ScoreFile {
    fn choice_scores(&self, item: &EvalItem) -> Result<Vec<ChoiceScore>, EvalError> {
        self.by_item
            .get(&item.item_id)
            .cloned()
            .ok_or_else(|| EvalError::MissingScores(item.item_id.clone()))
    }
}

/// Per-item correctness: the top-ranked choice equals the gold answer.
pub fn predict<S: ChoiceScorer + ?Sized>(
    scorer: &S,
    items: &[EvalItem],
    norm: Normalization,
) -> Result<BTreeMap<String, bool>, EvalError> {
    items
        .iter()
        .map(|item| {
            let scores = scorer.choice_scores(item)?;
            let pick = rank_choices(&scores, norm)?;
            if pick >= item.choices.len() {
                return Err(EvalError::ChoiceOutOfRange {
                    item_id: item.item_id.clone(),
                    choice_index: pick,
                });
            }
            Ok((item.item_id.clone(), pick == item.answer_index))
        })
        .collect()
}
