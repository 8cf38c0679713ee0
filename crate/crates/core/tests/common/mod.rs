#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intervene::corpus::{DataBatch, Document};
use intervene::item::EvalItem;

pub mod bm25;
pub mod buffer;
pub mod select;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Short words that are frequently substrings of one another, plus a
/// multi-byte one, so overlapping and nested hits are common.
pub const WORDS: [&str; 12] = [
    "ka", "kaso", "so", "sol", "lo", "kal", "é", "ré", "mi", "mika", "a", "Ka",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            // Sometimes glue words together to create cross-word hits.
            out.push_str(if rng.random_bool(0.2) { "" } else { " " });
        }
        out.push_str(WORDS.choose(rng).unwrap());
    }
    out
}

/// Documents with random texts over [`WORDS`], 1–4 tokens each, laid out
/// back to back with occasional one-token gaps.
pub fn text_batch(rng: &mut ChaCha8Rng, batch_id: u64, n_docs: usize, max_words: usize) -> DataBatch {
    let mut docs = Vec::with_capacity(n_docs);
    let mut tokens = Vec::new();
    for i in 0..n_docs {
        if rng.random_bool(0.1) {
            tokens.push(0);
        }
        let len = rng.random_range(1..=4);
        let start = tokens.len();
        tokens.extend((0..len).map(|_| rng.random_range(2..1000u32)));
        docs.push(Document {
            doc_id: format!("d{i:05}"),
            batch_id,
            token_start: start,
            token_end: tokens.len(),
            text: random_text(rng, max_words),
        });
    }
    DataBatch::new(batch_id, docs, tokens).unwrap()
}

pub fn entity_item(id: &str, subject: &str, object: &str) -> EvalItem {
    EvalItem {
        item_id: id.to_string(),
        question: format!("{subject} is related to"),
        choices: vec![object.to_string(), "zzz".to_string()],
        answer_index: 0,
        subject: Some(subject.to_string()),
        object: Some(object.to_string()),
        relation: Some("rel".to_string()),
        dataset: None,
    }
}

pub fn random_items(rng: &mut ChaCha8Rng, n: usize) -> Vec<EvalItem> {
    (0..n)
        .map(|i| {
            let s = WORDS.choose(rng).unwrap();
            let o = WORDS.choose(rng).unwrap();
            entity_item(&format!("i{i:04}"), s, o)
        })
        .collect()
}

/// Character intervals of every occurrence of `term` in `text`, by direct
/// comparison at every char position.
pub fn naive_hits(text: &str, term: &str) -> Vec<(usize, usize)> {
    let t: Vec<char> = text.chars().collect();
    let p: Vec<char> = term.chars().collect();
    if p.is_empty() || p.len() > t.len() {
        return Vec::new();
    }
    (0..=t.len() - p.len())
        .filter(|&i| t[i..i + p.len()] == p[..])
        .map(|i| (i, i + p.len()))
        .collect()
}

pub fn naive_cooccurs(text: &str, subject: &str, object: &str) -> bool {
    let hs = naive_hits(text, subject);
    let ho = naive_hits(text, object);
    hs.iter()
        .any(|&(a, b)| ho.iter().any(|&(c, d)| b <= c || d <= a))
}

pub fn naive_occurs(text: &str, subject: &str, object: &str) -> bool {
    !naive_hits(text, subject).is_empty() || !naive_hits(text, object).is_empty()
}

/// item id -> matched doc ids, by the given per-document predicate.
pub fn naive_match(
    batch: &DataBatch,
    items: &[EvalItem],
    pred: fn(&str, &str, &str) -> bool,
) -> BTreeMap<String, BTreeSet<String>> {
    items
        .iter()
        .map(|item| {
            let (s, o) = (item.subject.as_deref().unwrap(), item.object.as_deref().unwrap());
            let docs = batch
                .documents()
                .iter()
                .filter(|d| pred(&d.text, s, o))
                .map(|d| d.doc_id.clone())
                .collect();
            (item.item_id.clone(), docs)
        })
        .collect()
}

pub fn match_map(set: &intervene::MatchSet) -> BTreeMap<String, BTreeSet<String>> {
    set.entries()
        .iter()
        .map(|(id, docs)| (id.clone(), docs.iter().map(|d| d.doc_id.clone()).collect()))
        .collect()
}

/// A batch of `n_docs` documents with random lengths in `1..=max_len`, laid
/// out with random gaps. Token values encode the doc position so a buffer can
/// be traced back to its origin.
pub fn token_batch(
    rng: &mut ChaCha8Rng,
    batch_id: u64,
    prefix: &str,
    n_docs: usize,
    max_len: usize,
) -> DataBatch {
    let mut docs = Vec::with_capacity(n_docs);
    let mut tokens: Vec<u32> = Vec::new();
    for i in 0..n_docs {
        if rng.random_bool(0.15) {
            tokens.push(1);
        }
        let len = rng.random_range(1..=max_len);
        let start = tokens.len();
        let base = (batch_id as u32 % 7 + 1) * 100_000 + i as u32 * 100;
        tokens.extend((0..len as u32).map(|k| base + k));
        docs.push(Document {
            doc_id: format!("{prefix}{i:04}"),
            batch_id,
            token_start: start,
            token_end: tokens.len(),
            text: format!("{prefix} document {i}"),
        });
    }
    DataBatch::new(batch_id, docs, tokens).unwrap()
}

/// The same batch with every doc id prefixed, so two batches never share ids.
pub fn relabel(batch: &DataBatch, prefix: &str) -> DataBatch {
    let docs = batch
        .documents()
        .iter()
        .map(|d| Document {
            doc_id: format!("{prefix}{}", d.doc_id),
            ..d.clone()
        })
        .collect();
    DataBatch::new(batch.batch_id(), docs, batch.tokens().to_vec()).unwrap()
}

/// One single-token document per text, ids `d000`, `d001`, ...
pub fn docs(texts: &[&str]) -> DataBatch {
    let documents = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Document {
            doc_id: format!("d{i:03}"),
            batch_id: 1,
            token_start: i,
            token_end: i + 1,
            text: t.to_string(),
        })
        .collect();
    DataBatch::new(1, documents, vec![5u32; texts.len()]).unwrap()
}
