//! Precomputed dense-retrieval scores, one `{item_id, doc_id, score}` per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DocScore, MatchError, MatchMethod, MatchSet, Selection};
use crate::io::RecordError;
use crate::item::EvalItem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    pub item_id: String,
    pub doc_id: String,
    pub score: f64,
}

pub fn ingest_dense_scores(
    path: &Path,
    items: &[EvalItem],
    selection: Selection,
) -> Result<MatchSet, MatchError> {
    let known: BTreeSet<&str> = items.iter().map(|i| i.item_id.as_str()).collect();
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let mut entries: BTreeMap<String, Vec<DocScore>> = items
        .iter()
        .map(|i| (i.item_id.clone(), Vec::new()))
        .collect();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| RecordError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DenseRecord = serde_json::from_str(&line).map_err(|e| MatchError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !known.contains(rec.item_id.as_str()) {
            return Err(MatchError::UnknownItem {
                line: line_no,
                item_id: rec.item_id,
            });
        }
        if !rec.score.is_finite() {
            return Err(MatchError::NonFinite {
                line: line_no,
                item_id: rec.item_id,
                doc_id: rec.doc_id,
            });
        }
        if !seen.insert((rec.item_id.clone(), rec.doc_id.clone())) {
            return Err(MatchError::DuplicateScore {
                line: line_no,
                item_id: rec.item_id,
                doc_id: rec.doc_id,
            });
        }
        entries.get_mut(&rec.item_id).expect("known item").push(DocScore {
            doc_id: rec.doc_id,
            score: rec.score,
        });
    }
    MatchSet::new(MatchMethod::Dense, selection, None, entries)
}
