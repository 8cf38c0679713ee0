//! Greedy construction of suppress and promote plans.
//!
//! Relevant documents are visited from most to fewest matched target items
//! (ties by doc id). Each one is paired with the unrelated document of the
//! other batch whose token length is closest; on a length tie the longer
//! document wins, then the lower relevance score, then the lower doc id.

use std::collections::{BTreeMap, BTreeSet};

use super::{InterventionPlan, Mode, PlanConfig, PlanError, Replacement};
use crate::corpus::DataBatch;
use crate::matcher::MatchSet;

/// Matched docs of a batch with their reasons, capped per item at `k` for
/// scored methods.
struct Relevance {
    reasons: BTreeMap<String, Vec<String>>,
    max_score: BTreeMap<String, f64>,
}

impl Relevance {
    fn new(match_set: &MatchSet, targets: &BTreeSet<String>, k: usize) -> Self {
        let cap = if match_set.method.is_scored() { k } else { usize::MAX };
        let mut reasons: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut max_score: BTreeMap<String, f64> = BTreeMap::new();
        for item in targets {
            let docs = match_set.docs(item);
            for (rank, d) in docs.iter().enumerate() {
                let s = max_score.entry(d.doc_id.clone()).or_insert(f64::NEG_INFINITY);
                *s = s.max(d.score);
                if rank < cap {
                    reasons.entry(d.doc_id.clone()).or_default().push(item.clone());
                }
            }
        }
        Self { reasons, max_score }
    }

    fn is_related(&self, doc_id: &str) -> bool {
        self.reasons.contains_key(doc_id)
    }

    fn score(&self, doc_id: &str) -> f64 {
        self.max_score.get(doc_id).copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Related docs present in `batch`, most matched items first.
    fn ordered(&self, batch: &DataBatch, max: Option<usize>) -> Vec<(String, Vec<String>, f64)> {
        let present: BTreeSet<&str> = batch.documents().iter().map(|d| d.doc_id.as_str()).collect();
        let mut out: Vec<(String, Vec<String>, f64)> = self
            .reasons
            .iter()
            .filter(|(d, _)| present.contains(d.as_str()))
            .map(|(d, r)| (d.clone(), r.clone(), self.score(d)))
            .collect();
        out.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
        if let Some(m) = max {
            out.truncate(m);
        }
        out
    }
}

/// Maps an f64 to a u64 with the same total order.
fn ordered_bits(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Available documents bucketed by token length.
struct LengthPool {
    by_len: BTreeMap<usize, BTreeSet<(u64, String)>>,
    size: usize,
}

impl LengthPool {
    fn new(entries: impl IntoIterator<Item = (usize, f64, String)>) -> Self {
        let mut by_len: BTreeMap<usize, BTreeSet<(u64, String)>> = BTreeMap::new();
        let mut size = 0;
        for (len, score, id) in entries {
            by_len.entry(len).or_default().insert((ordered_bits(score), id));
            size += 1;
        }
        Self { by_len, size }
    }

    /// Removes and returns the closest-length document to `len`, preferring
    /// the longer side on a distance tie.
    fn take_closest(&mut self, len: usize) -> Option<(String, usize)> {
        let above = self.by_len.range(len..).next().map(|(&l, _)| l);
        let below = self.by_len.range(..len).next_back().map(|(&l, _)| l);
        let pick = match (above, below) {
            (Some(a), Some(b)) => {
                if a - len <= len - b {
                    a
                } else {
                    b
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => return None,
        };
        let bucket = self.by_len.get_mut(&pick).expect("bucket exists");
        let first = bucket.iter().next().cloned().expect("buckets are non-empty");
        bucket.remove(&first);
        if bucket.is_empty() {
            self.by_len.remove(&pick);
        }
        self.size -= 1;
        Some((first.1, pick))
    }
}

fn check_config(cfg: &PlanConfig) -> Result<(), PlanError> {
    if cfg.sequence_length == 0 {
        Err(PlanError::ZeroSequenceLength)
    } else {
        Ok(())
    }
}

/// Replaces documents of `batch_t` that match any target item with unrelated
/// documents of `batch_next`.
///
/// `matches_t` and `matches_next` come from the same matching method run on
/// the two batches; a donor is unrelated when `matches_next` lists it for no
/// target item.
pub fn plan_suppress(
    matches_t: &MatchSet,
    matches_next: &MatchSet,
    targets: &BTreeSet<String>,
    batch_t: &DataBatch,
    batch_next: &DataBatch,
    cfg: &PlanConfig,
) -> Result<InterventionPlan, PlanError> {
    check_config(cfg)?;
    let relevant = Relevance::new(matches_t, targets, cfg.k).ordered(batch_t, cfg.max_replacements);
    let donor_rel = Relevance::new(matches_next, targets, cfg.k);
    let mut pool = LengthPool::new(
        batch_next
            .documents()
            .iter()
            .filter(|d| !donor_rel.is_related(&d.doc_id) && d.len() <= cfg.sequence_length)
            .map(|d| (d.len(), donor_rel.score(&d.doc_id), d.doc_id.clone())),
    );
    if pool.size < relevant.len() {
        return Err(PlanError::InsufficientDonors {
            batch_id: batch_next.batch_id(),
            needed: relevant.len(),
            available: pool.size,
            shortfall: relevant.len() - pool.size,
        });
    }
    let positions = batch_t.positions();
    let mut replacements = Vec::with_capacity(relevant.len());
    for (doc_id, reason, score) in relevant {
        let target_len = batch_t.documents()[positions[doc_id.as_str()]].len();
        let (source, source_len) = pool.take_closest(target_len).expect("pool size checked");
        replacements.push(Replacement {
            target_doc_id: doc_id,
            source_doc_id: source,
            reason,
            score: if score.is_finite() { score } else { 1.0 },
            target_len,
            source_len,
        });
    }
    Ok(InterventionPlan {
        mode: Mode::Suppress,
        batch_id: batch_t.batch_id(),
        donor_batch_id: batch_next.batch_id(),
        method: matches_t.method,
        replacements,
        config: *cfg,
    })
}

/// Moves documents of `batch_next` that match any target item into
/// `batch_t`, each overwriting the closest-length unrelated document there.
pub fn plan_promote(
    matches_t: &MatchSet,
    matches_next: &MatchSet,
    targets: &BTreeSet<String>,
    batch_t: &DataBatch,
    batch_next: &DataBatch,
    cfg: &PlanConfig,
) -> Result<InterventionPlan, PlanError> {
    check_config(cfg)?;
    let sources = Relevance::new(matches_next, targets, cfg.k).ordered(batch_next, cfg.max_replacements);
    let next_positions = batch_next.positions();
    for (doc_id, _, _) in &sources {
        let len = batch_next.documents()[next_positions[doc_id.as_str()]].len();
        if len > cfg.sequence_length {
            return Err(PlanError::SourceTooLong {
                doc_id: doc_id.clone(),
                len,
                sequence_length: cfg.sequence_length,
            });
        }
    }
    let target_rel = Relevance::new(matches_t, targets, cfg.k);
    let mut pool = LengthPool::new(
        batch_t
            .documents()
            .iter()
            .filter(|d| !target_rel.is_related(&d.doc_id))
            .map(|d| (d.len(), target_rel.score(&d.doc_id), d.doc_id.clone())),
    );
    if pool.size < sources.len() {
        return Err(PlanError::InsufficientDonors {
            batch_id: batch_t.batch_id(),
            needed: sources.len(),
            available: pool.size,
            shortfall: sources.len() - pool.size,
        });
    }
    let mut replacements = Vec::with_capacity(sources.len());
    for (doc_id, reason, score) in sources {
        let source_len = batch_next.documents()[next_positions[doc_id.as_str()]].len();
        let (target, target_len) = pool.take_closest_target(source_len).expect("pool size checked");
        replacements.push(Replacement {
            target_doc_id: target,
            source_doc_id: doc_id,
            reason,
            score: if score.is_finite() { score } else { 1.0 },
            target_len,
            source_len,
        });
    }
    Ok(InterventionPlan {
        mode: Mode::Promote,
        batch_id: batch_t.batch_id(),
        donor_batch_id: batch_next.batch_id(),
        method: matches_next.method,
        replacements,
        config: *cfg,
    })
}

impl LengthPool {
    /// Closest-length document to receive a source of length `len`; on a
    /// distance tie the shorter target wins so the source is the longer side.
    fn take_closest_target(&mut self, len: usize) -> Option<(String, usize)> {
        let above = self.by_len.range(len + 1..).next().map(|(&l, _)| l);
        let at_or_below = self.by_len.range(..=len).next_back().map(|(&l, _)| l);
        let pick = match (above, at_or_below) {
            (Some(a), Some(b)) => {
                if len - b <= a - len {
                    b
                } else {
                    a
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => return None,
        };
        let bucket = self.by_len.get_mut(&pick).expect("bucket exists");
        let first = bucket.iter().next().cloned().expect("buckets are non-empty");
        bucket.remove(&first);
        if bucket.is_empty() {
            self.by_len.remove(&pick);
        }
        self.size -= 1;
        Some((first.1, pick))
    }
}
