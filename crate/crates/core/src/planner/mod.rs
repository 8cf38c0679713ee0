//! Intervention plans: which documents of a batch get replaced, by what, and
//! the token-level rewrite that carries the plan out.

mod apply;
mod plan;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{BatchId, DataBatch};
use crate::io::{self, RecordError};
use crate::matcher::MatchMethod;

pub use apply::{apply_plan, SwapEntry, SwapReport, SwapTotals};
pub use plan::{plan_promote, plan_suppress};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("not enough unrelated documents in batch {batch_id}: need {needed}, have {available} (shortfall {shortfall})")]
    InsufficientDonors {
        batch_id: BatchId,
        needed: usize,
        available: usize,
        shortfall: usize,
    },
    #[error("doc {doc_id} not found in batch {batch_id}")]
    UnknownDoc { batch_id: BatchId, doc_id: String },
    #[error("source doc {doc_id} has {len} tokens, longer than a whole sequence of {sequence_length}")]
    SourceTooLong {
        doc_id: String,
        len: usize,
        sequence_length: usize,
    },
    #[error("plan is for batch {expected}, got batch {found}")]
    BatchMismatch { expected: BatchId, found: BatchId },
    #[error("doc {0} appears more than once in the plan")]
    RepeatedDoc(String),
    #[error("replacement of {0} has no reason")]
    NoReason(String),
    #[error("cannot compute a replacement fraction over an empty batch")]
    EmptyBatch,
    #[error("plan file {0}: missing header record")]
    MissingHeader(String),
    #[error("sequence_length must be positive")]
    ZeroSequenceLength,
    #[error("unknown intervention mode {0:?}")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Suppress,
    Promote,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Suppress => "suppress",
            Mode::Promote => "promote",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "suppress" => Ok(Mode::Suppress),
            "promote" => Ok(Mode::Promote),
            other => Err(PlanError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Per-item cap on matched documents for scored methods.
    pub k: usize,
    /// Overall cap on replacements.
    #[serde(default)]
    pub max_replacements: Option<usize>,
    pub sequence_length: usize,
    pub pad_token: u32,
}

impl PlanConfig {
    pub fn new(sequence_length: usize, pad_token: u32) -> Self {
        Self {
            k: 1000,
            max_replacements: None,
            sequence_length,
            pad_token,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    /// Document of the intervened batch that is overwritten.
    pub target_doc_id: String,
    /// Document of the donor batch whose tokens are written in.
    pub source_doc_id: String,
    /// Target items that made this replacement necessary.
    pub reason: Vec<String>,
    pub score: f64,
    pub target_len: usize,
    pub source_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub mode: Mode,
    pub batch_id: BatchId,
    pub donor_batch_id: BatchId,
    pub method: MatchMethod,
    pub replacements: Vec<Replacement>,
    pub config: PlanConfig,
}

/// One line of a serialized plan; a header comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum PlanRecord {
    Header {
        mode: Mode,
        batch_id: BatchId,
        donor_batch_id: BatchId,
        method: MatchMethod,
        config: PlanConfig,
        #[serde(default)]
        config_hash: Option<String>,
    },
    Replacement(Replacement),
}

impl InterventionPlan {
    pub fn empty(mode: Mode, batch_id: BatchId, donor_batch_id: BatchId, method: MatchMethod, config: PlanConfig) -> Self {
        Self {
            mode,
            batch_id,
            donor_batch_id,
            method,
            replacements: Vec::new(),
            config,
        }
    }

    /// Each target and each source at most once, no doc on both sides, and
    /// every replacement justified by at least one item.
    pub fn validate(&self) -> Result<(), PlanError> {
        let mut targets = BTreeSet::new();
        let mut sources = BTreeSet::new();
        for r in &self.replacements {
            if !targets.insert(r.target_doc_id.as_str()) {
                return Err(PlanError::RepeatedDoc(r.target_doc_id.clone()));
            }
            if !sources.insert(r.source_doc_id.as_str()) {
                return Err(PlanError::RepeatedDoc(r.source_doc_id.clone()));
            }
            if r.reason.is_empty() {
                return Err(PlanError::NoReason(r.target_doc_id.clone()));
            }
        }
        if let Some(both) = targets.intersection(&sources).next() {
            return Err(PlanError::RepeatedDoc(both.to_string()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path, config_hash: Option<&str>) -> Result<(), PlanError> {
        let mut records = vec![PlanRecord::Header {
            mode: self.mode,
            batch_id: self.batch_id,
            donor_batch_id: self.donor_batch_id,
            method: self.method,
            config: self.config,
            config_hash: config_hash.map(str::to_string),
        }];
        records.extend(self.replacements.iter().cloned().map(PlanRecord::Replacement));
        io::write_jsonl(path, &records)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, PlanError> {
        let records: Vec<PlanRecord> = io::read_jsonl(path)?;
        let mut iter = records.into_iter();
        let Some(PlanRecord::Header {
            mode,
            batch_id,
            donor_batch_id,
            method,
            config,
            ..
        }) = iter.next()
        else {
            return Err(PlanError::MissingHeader(path.display().to_string()));
        };
        let replacements = iter
            .filter_map(|r| match r {
                PlanRecord::Replacement(r) => Some(r),
                PlanRecord::Header { .. } => None,
            })
            .collect();
        Ok(Self {
            mode,
            batch_id,
            donor_batch_id,
            method,
            replacements,
            config,
        })
    }
}

/// Share of the batch's documents that the plan replaces.
pub fn replacement_fraction(plan: &InterventionPlan, batch_t: &DataBatch) -> Result<f64, PlanError> {
    let n = batch_t.documents().len();
    if n == 0 {
        return Err(PlanError::EmptyBatch);
    }
    Ok(plan.replacements.len() as f64 / n as f64)
}
