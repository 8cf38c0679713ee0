//! Okapi BM25 computed directly from document texts.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use intervene::corpus::DataBatch;

/// Lowercased alphanumeric runs.
pub fn oracle_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Okapi BM25 evaluated directly from the document texts.
pub fn oracle_bm25(batch: &DataBatch, query: &str, k1: f64, b: f64) -> BTreeMap<String, f64> {
    let docs: Vec<(String, Vec<String>)> = batch
        .documents()
        .iter()
        .map(|d| (d.doc_id.clone(), oracle_terms(&d.text)))
        .collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let q: BTreeSet<String> = oracle_terms(query).into_iter().collect();
    let mut out = BTreeMap::new();
    for (id, toks) in &docs {
        let mut score = 0.0;
        for t in &q {
            let df = docs.iter().filter(|(_, d)| d.contains(t)).count() as f64;
            let tf = toks.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += idf * tf / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg));
        }
        if score > 0.0 {
            out.insert(id.clone(), score);
        }
    }
    out
}

pub fn bm25_corpus(seed: u64, n_docs: usize) -> DataBatch {
    const VOCAB: [&str; 25] = [
        "river", "stone", "Paris", "capital", "France", "city", "the", "of", "is", "a", "product", "Google",
        "lake", "north", "born", "language", "official", "located", "in", "Ürümqi", "x1", "y2", "Z3", "sun", "moon",
    ];
    let mut rng = super::rng(seed);
    let texts: Vec<String> = (0..n_docs)
        .map(|_| {
            let n = rng.random_range(1..30);
            (0..n)
                .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
                .collect::<Vec<_>>()
                .join(if rng.random_bool(0.5) { " " } else { ", " })
        })
        .collect();
    super::docs(&texts.iter().map(String::as_str).collect::<Vec<_>>())
}
