//! Learned-at analysis over checkpoint trajectories and target selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::io::{self, RecordError};
use crate::matcher::MatchSet;
use crate::planner::Mode;

pub use crate::item::EvalItem;

pub type Step = u64;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("correctness matrix is empty")]
    Empty,
    #[error("item {item_id} has no outcome at step {step}")]
    Gap { item_id: String, step: Step },
    #[error("item {item_id} has two outcomes at step {step}")]
    Duplicate { item_id: String, step: Step },
    #[error("step {0} is not a checkpoint step")]
    UnknownStep(Step),
    #[error("step {0} has no successor checkpoint")]
    NoSuccessor(Step),
    #[error("no step exhibits behavior under rule {0}")]
    NoBehavior(String),
    #[error("unknown selection rule {0:?}")]
    UnknownRule(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessRecord {
    pub item_id: String,
    pub step: Step,
    pub correct: bool,
}

/// Item × checkpoint outcomes. Steps are strictly increasing and every item
/// has an outcome at every step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMatrix {
    steps: Vec<Step>,
    item_ids: Vec<String>,
    outcomes: Vec<bool>,
}

impl CorrectnessMatrix {
    /// `rows[i][j]` is the outcome of item `i` at `steps[j]`. Steps are sorted
    /// here; rows must be given in the order of the sorted steps.
    pub fn new(steps: Vec<Step>, item_ids: Vec<String>, rows: Vec<Vec<bool>>) -> Result<Self, SelectError> {
        if steps.is_empty() || item_ids.is_empty() {
            return Err(SelectError::Empty);
        }
        for w in steps.windows(2) {
            if w[1] <= w[0] {
                return Err(SelectError::Duplicate {
                    item_id: String::new(),
                    step: w[1],
                });
            }
        }
        let mut seen = BTreeSet::new();
        let mut outcomes = Vec::with_capacity(steps.len() * item_ids.len());
        for (id, row) in item_ids.iter().zip(&rows) {
            if !seen.insert(id.as_str()) {
                return Err(SelectError::Duplicate {
                    item_id: id.clone(),
                    step: steps[0],
                });
            }
            if row.len() != steps.len() {
                return Err(SelectError::Gap {
                    item_id: id.clone(),
                    step: steps[row.len().min(steps.len() - 1)],
                });
            }
            outcomes.extend_from_slice(row);
        }
        if rows.len() != item_ids.len() {
            return Err(SelectError::Gap {
                item_id: item_ids[rows.len().min(item_ids.len() - 1)].clone(),
                step: steps[0],
            });
        }
        Ok(Self {
            steps,
            item_ids,
            outcomes,
        })
    }

    pub fn from_records(records: &[CorrectnessRecord]) -> Result<Self, SelectError> {
        let steps: BTreeSet<Step> = records.iter().map(|r| r.step).collect();
        let mut by_item: BTreeMap<&str, BTreeMap<Step, bool>> = BTreeMap::new();
        for r in records {
            let row = by_item.entry(r.item_id.as_str()).or_default();
            if row.insert(r.step, r.correct).is_some() {
                return Err(SelectError::Duplicate {
                    item_id: r.item_id.clone(),
                    step: r.step,
                });
            }
        }
        let steps: Vec<Step> = steps.into_iter().collect();
        let mut item_ids = Vec::with_capacity(by_item.len());
        let mut rows = Vec::with_capacity(by_item.len());
        for (item_id, row) in by_item {
            if let Some(&missing) = steps.iter().find(|s| !row.contains_key(s)) {
                return Err(SelectError::Gap {
                    item_id: item_id.to_string(),
                    step: missing,
                });
            }
            item_ids.push(item_id.to_string());
            rows.push(row.into_values().collect());
        }
        Self::new(steps, item_ids, rows)
    }

    pub fn load(path: &Path) -> Result<Self, SelectError> {
        let records: Vec<CorrectnessRecord> = io::read_jsonl(path)?;
        Self::from_records(&records)
    }

    pub fn to_records(&self) -> Vec<CorrectnessRecord> {
        let mut out = Vec::with_capacity(self.outcomes.len());
        for (i, id) in self.item_ids.iter().enumerate() {
            for (j, &step) in self.steps.iter().enumerate() {
                out.push(CorrectnessRecord {
                    item_id: id.clone(),
                    step,
                    correct: self.outcome(i, j),
                });
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        io::write_jsonl(path, &self.to_records())
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn outcome(&self, item: usize, step_idx: usize) -> bool {
        self.outcomes[item * self.steps.len() + step_idx]
    }

    pub fn row(&self, item: usize) -> &[bool] {
        let n = self.steps.len();
        &self.outcomes[item * n..(item + 1) * n]
    }

    pub fn step_index(&self, step: Step) -> Result<usize, SelectError> {
        self.steps
            .binary_search(&step)
            .map_err(|_| SelectError::UnknownStep(step))
    }

    pub fn successor(&self, step: Step) -> Result<Step, SelectError> {
        let j = self.step_index(step)?;
        self.steps
            .get(j + 1)
            .copied()
            .ok_or(SelectError::NoSuccessor(step))
    }

    /// Accuracy over all items at one step.
    pub fn accuracy_at(&self, step_idx: usize) -> f64 {
        let n = self.item_ids.len();
        (0..n).filter(|&i| self.outcome(i, step_idx)).count() as f64 / n as f64
    }
}

/// Earliest step at which the item is correct and stays correct at every
/// later step of the matrix; `None` if it is wrong at the last step.
pub fn learned_at(matrix: &CorrectnessMatrix) -> BTreeMap<String, Option<Step>> {
    matrix
        .item_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let row = matrix.row(i);
            let trailing = row.iter().rev().take_while(|&&c| c).count();
            let step = (trailing > 0).then(|| matrix.steps()[row.len() - trailing]);
            (id.clone(), step)
        })
        .collect()
}

/// A named item-selection rule evaluated at one checkpoint step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Items whose learned-at step is the given step.
    #[default]
    LearnedAt,
    /// Items wrong at the step after being right at each of the
    /// `min_prior` checkpoints immediately before it.
    ForgottenAt { min_prior: usize },
}

impl SelectionRule {
    pub fn name(&self) -> String {
        match self {
            SelectionRule::LearnedAt => "learned-at".to_string(),
            SelectionRule::ForgottenAt { min_prior } => format!("forgotten-at(m={min_prior})"),
        }
    }

    /// Items exhibiting the behavior at `step`.
    pub fn subset(&self, matrix: &CorrectnessMatrix, step: Step) -> Result<BTreeSet<String>, SelectError> {
        let j = matrix.step_index(step)?;
        Ok(self.subset_at(matrix, j, &learned_at(matrix)))
    }

    fn subset_at(
        &self,
        matrix: &CorrectnessMatrix,
        j: usize,
        learned: &BTreeMap<String, Option<Step>>,
    ) -> BTreeSet<String> {
        let step = matrix.steps()[j];
        match *self {
            SelectionRule::LearnedAt => learned
                .iter()
                .filter(|(_, s)| **s == Some(step))
                .map(|(id, _)| id.clone())
                .collect(),
            SelectionRule::ForgottenAt { min_prior } => {
                if j < min_prior {
                    return BTreeSet::new();
                }
                matrix
                    .item_ids()
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| {
                        let row = matrix.row(i);
                        !row[j] && row[j - min_prior..j].iter().all(|&c| c)
                    })
                    .map(|(_, id)| id.clone())
                    .collect()
            }
        }
    }
}

impl FromStr for SelectionRule {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned-at" | "learned" => Ok(SelectionRule::LearnedAt),
            "forgotten-at" | "forgotten" => Ok(SelectionRule::ForgottenAt { min_prior: 3 }),
            other => {
                if let Some(m) = other
                    .strip_prefix("forgotten-at:")
                    .and_then(|m| m.parse().ok())
                {
                    Ok(SelectionRule::ForgottenAt { min_prior: m })
                } else {
                    Err(SelectError::UnknownRule(other.to_string()))
                }
            }
        }
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Target items at a step and their complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSelection {
    pub step: Step,
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub targets: BTreeSet<String>,
    pub control: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_matches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl TargetSelection {
    fn partition(matrix: &CorrectnessMatrix, step: Step, rule: String, targets: BTreeSet<String>) -> Self {
        let control = matrix
            .item_ids()
            .iter()
            .filter(|id| !targets.contains(*id))
            .cloned()
            .collect();
        Self {
            step,
            rule,
            mode: None,
            targets,
            control,
            min_matches: None,
            config_hash: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self, RecordError> {
        io::read_json(path)
    }
}

pub fn select_with_rule(
    matrix: &CorrectnessMatrix,
    step: Step,
    rule: SelectionRule,
) -> Result<TargetSelection, SelectError> {
    let targets = rule.subset(matrix, step)?;
    Ok(TargetSelection::partition(matrix, step, rule.name(), targets))
}

/// Suppress targets the items learned at `step`; promote targets the items
/// learned at the checkpoint after `step`. Everything else is control.
pub fn select_targets(
    matrix: &CorrectnessMatrix,
    step: Step,
    mode: Mode,
) -> Result<TargetSelection, SelectError> {
    matrix.step_index(step)?;
    let learned_step = match mode {
        Mode::Suppress => step,
        Mode::Promote => matrix.successor(step)?,
    };
    let targets = learned_at(matrix)
        .into_iter()
        .filter(|(_, s)| *s == Some(learned_step))
        .map(|(id, _)| id)
        .collect();
    let mut sel = TargetSelection::partition(matrix, step, SelectionRule::LearnedAt.name(), targets);
    sel.mode = Some(mode);
    Ok(sel)
}

/// Step whose behavior subset is largest; ties go to the earliest step.
pub fn argmax_step(matrix: &CorrectnessMatrix, rule: SelectionRule) -> Result<Step, SelectError> {
    let learned = learned_at(matrix);
    let mut best: Option<(usize, Step)> = None;
    for (j, &step) in matrix.steps().iter().enumerate() {
        let size = rule.subset_at(matrix, j, &learned).len();
        if size > 0 && best.is_none_or(|(b, _)| size > b) {
            best = Some((size, step));
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| SelectError::NoBehavior(rule.name()))
}

/// Keeps only targets with at least `min_matches` matched documents; the rest
/// move to control.
pub fn filter_by_matches(
    selection: &TargetSelection,
    match_set: &MatchSet,
    min_matches: usize,
) -> TargetSelection {
    let mut out = selection.clone();
    out.min_matches = Some(min_matches);
    let (keep, drop): (BTreeSet<String>, BTreeSet<String>) = selection
        .targets
        .iter()
        .cloned()
        .partition(|id| match_set.match_count(id) >= min_matches);
    out.targets = keep;
    out.control.extend(drop);
    out
}
