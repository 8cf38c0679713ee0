//! Reference model of plan application over a buffer of owned cells.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use intervene::corpus::{DataBatch, Document};
use intervene::planner::{InterventionPlan, Mode, PlanConfig, Replacement};
use intervene::MatchMethod;

pub const PAD: u32 = 0;

/// Batch and doc position encoded in a `common::token_batch` token value.
pub fn origin(v: u32) -> Option<(u32, u32)> {
    (v >= 100_000).then_some((v / 100_000, (v % 100_000) / 100))
}

/// What the oracle expects from a plan.
pub struct Expected {
    pub tokens: Vec<u32>,
    pub spans: BTreeMap<String, (usize, usize)>,
    pub skipped: Vec<String>,
    pub spill: Vec<(usize, usize)>,
    pub truncated: BTreeSet<String>,
    pub padded: BTreeSet<String>,
    pub dropped: BTreeSet<String>,
}

/// Rewrites a buffer of cells tagged with their owning document. Pads written
/// at a sequence end belong to the document that continues past it.
pub fn oracle(plan: &InterventionPlan, t: &DataBatch, next: &DataBatch) -> Expected {
    let seq = plan.config.sequence_length;
    let mut cells: Vec<(u32, Option<String>)> = t.tokens().iter().map(|&v| (v, None)).collect();
    for d in t.documents() {
        for c in &mut cells[d.span()] {
            c.1 = Some(d.doc_id.clone());
        }
    }
    let total = cells.len();
    let mut reps: Vec<&Replacement> = plan.replacements.iter().collect();
    reps.sort_by_key(|r| t.get(&r.target_doc_id).unwrap().token_start);
    let owned = |cells: &[(u32, Option<String>)], id: &str| -> usize {
        cells.iter().filter(|c| c.1.as_deref() == Some(id)).count()
    };
    let mut ex = Expected {
        tokens: Vec::new(),
        spans: BTreeMap::new(),
        skipped: Vec::new(),
        spill: Vec::new(),
        truncated: BTreeSet::new(),
        padded: BTreeSet::new(),
        dropped: BTreeSet::new(),
    };
    let mut replaced = BTreeSet::new();
    for r in reps {
        let at: Vec<usize> = (0..total).filter(|&i| cells[i].1.as_deref() == Some(&r.target_doc_id)).collect();
        let (Some(&ts), Some(&last)) = (at.first(), at.last()) else {
            ex.skipped.push(r.target_doc_id.clone());
            continue;
        };
        let te = last + 1;
        let end = (te.div_ceil(seq) * seq).min(total);
        let crossing = (end < total && cells[end - 1].1.is_some() && cells[end - 1].1 == cells[end].1)
            .then(|| cells[end].1.clone().unwrap());
        let before: BTreeMap<String, usize> = cells[te..end]
            .iter()
            .filter_map(|c| c.1.clone())
            .map(|id| (id.clone(), owned(&cells, &id)))
            .collect();
        let src = next.doc_tokens(next.get(&r.source_doc_id).unwrap());
        let mut region: Vec<(u32, Option<String>)> = src.iter().map(|&v| (v, Some(r.source_doc_id.clone()))).collect();
        region.extend_from_slice(&cells[te..end]);
        let len = end - ts;
        ex.spill.push((region.len().saturating_sub(len), len.saturating_sub(region.len())));
        if region.len() < len && crossing.is_some() {
            ex.padded.insert(crossing.clone().unwrap());
        }
        region.resize(len, (PAD, crossing));
        cells.splice(ts..end, region);
        for (id, n) in before {
            match owned(&cells, &id) {
                0 => {
                    ex.dropped.insert(id);
                }
                m if m < n => {
                    ex.truncated.insert(id);
                }
                _ => {}
            }
        }
        replaced.insert(r.target_doc_id.clone());
    }
    for id in ex.dropped.iter().chain(&replaced) {
        ex.truncated.remove(id);
        ex.padded.remove(id);
    }
    for (i, (_, owner)) in cells.iter().enumerate() {
        if let Some(id) = owner {
            let e = ex.spans.entry(id.clone()).or_insert((i, i));
            assert_eq!(e.1, i, "{id} owns non-contiguous cells");
            e.1 = i + 1;
        }
    }
    ex.tokens = cells.into_iter().map(|c| c.0).collect();
    ex
}

pub fn random_plan(
    rng: &mut rand_chacha::ChaCha8Rng,
    t: &DataBatch,
    next: &DataBatch,
    seq: usize,
) -> InterventionPlan {
    let mut targets: Vec<&Document> = t.documents().iter().collect();
    targets.shuffle(rng);
    let mut sources: Vec<&Document> = next.documents().iter().filter(|d| d.len() <= seq).collect();
    sources.shuffle(rng);
    let n = rng.random_range(0..=targets.len().min(sources.len()));
    let replacements = targets
        .iter()
        .zip(&sources)
        .take(n)
        .map(|(a, b)| Replacement {
            target_doc_id: a.doc_id.clone(),
            source_doc_id: b.doc_id.clone(),
            reason: vec!["item".into()],
            score: 1.0,
            target_len: a.len(),
            source_len: b.len(),
        })
        .collect();
    InterventionPlan {
        replacements,
        ..InterventionPlan::empty(Mode::Suppress, t.batch_id(), next.batch_id(), MatchMethod::Cooccurrence, PlanConfig::new(seq, PAD))
    }
}
