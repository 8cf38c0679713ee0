//! Matching pretraining documents to evaluation items.
//!
//! Every matching method produces a [`MatchSet`]: for each item, the documents
//! it matches with a score (exactly `1.0` for the boolean string methods).
//! Scored methods are cut down to an indicator with a [`Selection`], either a
//! per-item top-k or a score threshold. [`f_match`] then takes the union over a
//! group of target items.

mod bm25;
mod dense;
mod occurrence;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::BatchId;
use crate::io::{self, RecordError};

pub use bm25::{build_bm25, item_query, match_bm25, score_bm25, Analyzer, Bm25Index, Bm25Params};
pub use dense::{ingest_dense_scores, DenseRecord};
pub use occurrence::{
    find_occurrences, match_cooccurrence, match_occurrence, EntitySearch, TermHit,
};

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("line {line}: malformed score record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: non-finite score for item {item_id}, doc {doc_id}")]
    NonFinite {
        line: usize,
        item_id: String,
        doc_id: String,
    },
    #[error("line {line}: unknown item_id {item_id}")]
    UnknownItem { line: usize, item_id: String },
    #[error("line {line}: duplicate score for item {item_id}, doc {doc_id}")]
    DuplicateScore {
        line: usize,
        item_id: String,
        doc_id: String,
    },
    #[error("item {item_id}: doc {doc_id} listed twice")]
    DuplicateDoc { item_id: String, doc_id: String },
    #[error("item {item_id}: boolean method {method} requires score 1.0, got {score}")]
    BooleanScore {
        item_id: String,
        method: MatchMethod,
        score: f64,
    },
    #[error("match set file {0}: missing header record")]
    MissingHeader(String),
    #[error("unknown matching method {0:?}")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Cooccurrence,
    Occurrence,
    Bm25,
    Dense,
}

impl MatchMethod {
    pub fn is_scored(self) -> bool {
        matches!(self, MatchMethod::Bm25 | MatchMethod::Dense)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MatchMethod::Cooccurrence => "cooccurrence",
            MatchMethod::Occurrence => "occurrence",
            MatchMethod::Bm25 => "bm25",
            MatchMethod::Dense => "dense",
        }
    }
}

impl fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchMethod {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cooc" | "cooccurrence" => Ok(MatchMethod::Cooccurrence),
            "occ" | "occurrence" => Ok(MatchMethod::Occurrence),
            "bm25" => Ok(MatchMethod::Bm25),
            "dense" | "dpr" => Ok(MatchMethod::Dense),
            other => Err(MatchError::UnknownMethod(other.to_string())),
        }
    }
}

/// How a scored method's per-item ranking becomes a match indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    All,
    TopK(usize),
    Threshold(f64),
}

impl Default for Selection {
    fn default() -> Self {
        Selection::TopK(1000)
    }
}

impl Selection {
    /// `docs` must already be ranked (score descending, doc id ascending).
    fn apply(self, docs: &mut Vec<DocScore>) {
        match self {
            Selection::All => {}
            Selection::TopK(k) => docs.truncate(k),
            Selection::Threshold(tau) => docs.retain(|d| d.score >= tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub score: f64,
}

/// Orders by score descending, then doc id ascending.
pub(crate) fn rank_order(a: &DocScore, b: &DocScore) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub method: MatchMethod,
    pub selection: Selection,
    pub batch_id: Option<BatchId>,
    entries: BTreeMap<String, Vec<DocScore>>,
    skipped: Vec<String>,
}

impl MatchSet {
    /// Validates and normalizes per-item doc lists: scores must be finite,
    /// docs unique per item, and boolean methods must carry score 1.0. Lists
    /// are ranked and, for scored methods, cut by `selection`.
    pub fn new(
        method: MatchMethod,
        selection: Selection,
        batch_id: Option<BatchId>,
        entries: BTreeMap<String, Vec<DocScore>>,
    ) -> Result<Self, MatchError> {
        let mut normalized = BTreeMap::new();
        for (item_id, mut docs) in entries {
            let mut seen = BTreeSet::new();
            for d in &docs {
                if !d.score.is_finite() {
                    return Err(MatchError::NonFinite {
                        line: 0,
                        item_id: item_id.clone(),
                        doc_id: d.doc_id.clone(),
                    });
                }
                if !method.is_scored() && d.score != 1.0 {
                    return Err(MatchError::BooleanScore {
                        item_id: item_id.clone(),
                        method,
                        score: d.score,
                    });
                }
                if !seen.insert(d.doc_id.as_str()) {
                    return Err(MatchError::DuplicateDoc {
                        item_id: item_id.clone(),
                        doc_id: d.doc_id.clone(),
                    });
                }
            }
            docs.sort_by(rank_order);
            if method.is_scored() {
                selection.apply(&mut docs);
            }
            normalized.insert(item_id, docs);
        }
        Ok(Self {
            method,
            selection: if method.is_scored() {
                selection
            } else {
                Selection::All
            },
            batch_id,
            entries: normalized,
            skipped: Vec::new(),
        })
    }

    pub fn with_skipped(mut self, skipped: Vec<String>) -> Self {
        self.skipped = skipped;
        self
    }

    /// Items that could not be matched (e.g. missing subject or object).
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<DocScore>> {
        &self.entries
    }

    pub fn docs(&self, item_id: &str) -> &[DocScore] {
        self.entries.get(item_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn covers(&self, item_id: &str) -> bool {
        self.entries.contains_key(item_id)
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn match_count(&self, item_id: &str) -> usize {
        self.docs(item_id).len()
    }

    /// Target items matched by each doc, restricted to `targets`.
    pub fn items_by_doc(&self, targets: &BTreeSet<String>) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (item_id, docs) in &self.entries {
            if !targets.contains(item_id) {
                continue;
            }
            for d in docs {
                out.entry(d.doc_id.clone()).or_default().push(item_id.clone());
            }
        }
        out
    }

    /// Highest score any of `targets` assigns to each doc.
    pub fn max_score_by_doc(&self, targets: &BTreeSet<String>) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (item_id, docs) in &self.entries {
            if !targets.contains(item_id) {
                continue;
            }
            for d in docs {
                let e = out.entry(d.doc_id.clone()).or_insert(f64::NEG_INFINITY);
                *e = e.max(d.score);
            }
        }
        out
    }

    pub fn to_records(&self, config_hash: Option<&str>) -> Vec<MatchRecord> {
        let mut out = vec![MatchRecord::Header {
            method: self.method,
            selection: self.selection,
            batch_id: self.batch_id,
            items: self.entries.keys().cloned().collect(),
            skipped: self.skipped.clone(),
            config_hash: config_hash.map(str::to_string),
        }];
        for (item_id, docs) in &self.entries {
            for d in docs {
                out.push(MatchRecord::Match {
                    item_id: item_id.clone(),
                    doc_id: d.doc_id.clone(),
                    score: d.score,
                });
            }
        }
        out
    }

    pub fn write(&self, path: &Path, config_hash: Option<&str>) -> Result<(), MatchError> {
        io::write_jsonl(path, &self.to_records(config_hash))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, MatchError> {
        let records: Vec<MatchRecord> = io::read_jsonl(path)?;
        let mut iter = records.into_iter();
        let Some(MatchRecord::Header {
            method,
            selection,
            batch_id,
            items,
            skipped,
            ..
        }) = iter.next()
        else {
            return Err(MatchError::MissingHeader(path.display().to_string()));
        };
        let mut entries: BTreeMap<String, Vec<DocScore>> =
            items.into_iter().map(|i| (i, Vec::new())).collect();
        for r in iter {
            if let MatchRecord::Match {
                item_id,
                doc_id,
                score,
            } = r
            {
                entries
                    .entry(item_id)
                    .or_default()
                    .push(DocScore { doc_id, score });
            }
        }
        Ok(Self::new(method, selection, batch_id, entries)?.with_skipped(skipped))
    }
}

/// One line of a serialized match set. The first line is always a header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum MatchRecord {
    Header {
        method: MatchMethod,
        selection: Selection,
        batch_id: Option<BatchId>,
        items: Vec<String>,
        #[serde(default)]
        skipped: Vec<String>,
        #[serde(default)]
        config_hash: Option<String>,
    },
    Match {
        item_id: String,
        doc_id: String,
        score: f64,
    },
}

/// A document matches the target group if it matches any target item.
pub fn f_match<'a, I>(match_set: &MatchSet, targets: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut out = BTreeSet::new();
    for item_id in targets {
        for d in match_set.docs(item_id) {
            out.insert(d.doc_id.clone());
        }
    }
    out
}
