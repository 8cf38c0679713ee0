//! Okapi BM25 over document text.
//!
//! `score(q, d) = Σ_t idf(t) · tf / (tf + k1 · (1 − b + b · len / avglen))`
//! with `idf(t) = ln((N − df + 0.5) / (df + 0.5) + 1)`, summed over the
//! distinct analyzed terms of the query.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rank_order, DocScore, MatchError, MatchMethod, MatchSet, Selection};
use crate::corpus::DataBatch;
use crate::item::EvalItem;

/// Lowercases and splits on non-alphanumeric characters. No stemming.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    #[serde(default = "default_true")]
    pub lowercase: bool,
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

fn default_true() -> bool {
    true
}

impl Analyzer {
    pub fn standard() -> Self {
        Self {
            lowercase: true,
            stopwords: BTreeSet::new(),
        }
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| if self.lowercase { t.to_lowercase() } else { t.to_string() })
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    pub analyzer: Analyzer,
    /// Sorted ascending; posting lists refer to positions in this list.
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    /// term -> (doc position, term frequency), sorted by doc position
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        let pos = self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()?;
        Some(self.doc_lens[pos])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// All documents with a positive score, ranked.
    fn score_all(&self, query: &str) -> Vec<DocScore> {
        let terms: BTreeSet<String> = self.analyzer.analyze(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in postings {
                let tf = tf as f64;
                let len_norm = if self.avg_len > 0.0 {
                    self.doc_lens[doc as usize] as f64 / self.avg_len
                } else {
                    0.0
                };
                *acc.entry(doc).or_insert(0.0) += idf * tf / (tf + k1 * (1.0 - b + b * len_norm));
            }
        }
        let mut out: Vec<DocScore> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(doc, score)| DocScore {
                doc_id: self.doc_ids[doc as usize].clone(),
                score,
            })
            .collect();
        out.sort_by(rank_order);
        out
    }
}

/// Indexes the sidecar text of every document. Term counting runs in
/// parallel; the merge walks documents in doc id order so the result does not
/// depend on scheduling.
pub fn build_bm25(
    batch: &DataBatch,
    analyzer: &Analyzer,
    params: Bm25Params,
) -> Result<Bm25Index, MatchError> {
    if batch.documents().is_empty() {
        return Err(MatchError::EmptyCorpus);
    }
    let mut docs: Vec<(&str, &str)> = batch
        .documents()
        .iter()
        .map(|d| (d.doc_id.as_str(), d.text.as_str()))
        .collect();
    docs.sort_by(|a, b| a.0.cmp(b.0));

    let counted: Vec<(u32, BTreeMap<String, u32>)> = docs
        .par_iter()
        .map(|(_, text)| {
            let terms = analyzer.analyze(text);
            let len = terms.len() as u32;
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_insert(0) += 1;
            }
            (len, tf)
        })
        .collect();

    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lens = Vec::with_capacity(counted.len());
    for (pos, (len, tf)) in counted.into_iter().enumerate() {
        doc_lens.push(len);
        for (term, count) in tf {
            postings.entry(term).or_default().push((pos as u32, count));
        }
    }
    let avg_len = doc_lens.iter().map(|&l| l as f64).sum::<f64>() / doc_lens.len() as f64;
    Ok(Bm25Index {
        params,
        analyzer: analyzer.clone(),
        doc_ids: docs.into_iter().map(|(id, _)| id.to_string()).collect(),
        doc_lens,
        avg_len,
        postings,
    })
}

/// The `top_k` highest-scoring documents, score descending with ties broken
/// by ascending doc id. Documents scoring zero are never returned.
pub fn score_bm25(
    index: &Bm25Index,
    query: &str,
    top_k: usize,
) -> Result<Vec<(String, f64)>, MatchError> {
    if top_k == 0 {
        return Err(MatchError::InvalidTopK);
    }
    let mut ranked = index.score_all(query);
    ranked.truncate(top_k);
    Ok(ranked.into_iter().map(|d| (d.doc_id, d.score)).collect())
}

/// The query for an item: its question followed by the correct answer.
pub fn item_query(item: &EvalItem) -> String {
    format!("{} {}", item.question, item.answer())
}

/// Scores every document against every item's query and keeps what
/// `selection` allows.
pub fn match_bm25(
    batch: &DataBatch,
    items: &[EvalItem],
    analyzer: &Analyzer,
    params: Bm25Params,
    selection: Selection,
) -> Result<MatchSet, MatchError> {
    let index = build_bm25(batch, analyzer, params)?;
    let entries: BTreeMap<String, Vec<DocScore>> = items
        .par_iter()
        .map(|item| (item.item_id.clone(), index.score_all(&item_query(item))))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    MatchSet::new(MatchMethod::Bm25, selection, Some(batch.batch_id()), entries)
}
