//! Token-level document swapping.
//!
//! Replacing a target document rewrites the region from the target's first
//! token to the end of the training sequence holding its last token. The
//! region becomes `source ++ rest`, where `rest` is whatever followed the
//! target inside that sequence. A longer source pushes `rest` right and the
//! overflow is cut at the sequence end; a shorter source pulls `rest` left
//! and the sequence tail is filled with the pad token. Token counts never
//! change and sequences without a replacement are untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{InterventionPlan, PlanError};
use crate::corpus::{DataBatch, Document};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapEntry {
    pub target_doc_id: String,
    pub source_doc_id: String,
    pub target_len: usize,
    pub source_len: usize,
    pub exact_length: bool,
    pub tokens_truncated: usize,
    /// Pad tokens written because the source was shorter than the target.
    pub pad_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SwapTotals {
    pub replacements: usize,
    pub exact_length: usize,
    pub exact_length_rate: f64,
    pub tokens_truncated: usize,
    pub pad_tokens: usize,
    pub shorter_sources: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub batch_id: u64,
    pub donor_batch_id: u64,
    pub entries: Vec<SwapEntry>,
    /// Targets that an earlier replacement had already pushed out of the batch.
    pub skipped_targets: Vec<String>,
    /// Documents pushed entirely past a sequence end.
    pub dropped_docs: Vec<String>,
    /// Documents that lost tokens at a sequence end (their sidecar text is
    /// left as it was).
    pub truncated_docs: Vec<String>,
    /// Documents whose span now contains pad tokens written at a sequence end.
    pub padded_docs: Vec<String>,
    pub totals: SwapTotals,
    /// How donors were paired with targets.
    pub length_rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl SwapReport {
    fn finish(&mut self) {
        let t = &mut self.totals;
        t.replacements = self.entries.len();
        t.exact_length = self.entries.iter().filter(|e| e.exact_length).count();
        t.exact_length_rate = if t.replacements == 0 {
            1.0
        } else {
            t.exact_length as f64 / t.replacements as f64
        };
        t.tokens_truncated = self.entries.iter().map(|e| e.tokens_truncated).sum();
        t.pad_tokens = self.entries.iter().map(|e| e.pad_tokens).sum();
        t.shorter_sources = self.entries.iter().filter(|e| e.source_len < e.target_len).count();
    }
}

/// Mutable document table used while rewriting.
struct Span {
    doc_id: String,
    start: usize,
    end: usize,
    text: String,
}

pub fn apply_plan(
    plan: &InterventionPlan,
    batch_t: &DataBatch,
    batch_next: &DataBatch,
) -> Result<(DataBatch, SwapReport), PlanError> {
    if batch_t.batch_id() != plan.batch_id {
        return Err(PlanError::BatchMismatch {
            expected: plan.batch_id,
            found: batch_t.batch_id(),
        });
    }
    if batch_next.batch_id() != plan.donor_batch_id {
        return Err(PlanError::BatchMismatch {
            expected: plan.donor_batch_id,
            found: batch_next.batch_id(),
        });
    }
    plan.validate()?;
    let seq_len = plan.config.sequence_length;
    if seq_len == 0 {
        return Err(PlanError::ZeroSequenceLength);
    }
    let pad = plan.config.pad_token;

    let t_pos = batch_t.positions();
    let n_pos = batch_next.positions();
    let mut ordered: Vec<(usize, &super::Replacement)> = Vec::with_capacity(plan.replacements.len());
    for r in &plan.replacements {
        let &p = t_pos.get(r.target_doc_id.as_str()).ok_or_else(|| PlanError::UnknownDoc {
            batch_id: batch_t.batch_id(),
            doc_id: r.target_doc_id.clone(),
        })?;
        let &s = n_pos.get(r.source_doc_id.as_str()).ok_or_else(|| PlanError::UnknownDoc {
            batch_id: batch_next.batch_id(),
            doc_id: r.source_doc_id.clone(),
        })?;
        let src_len = batch_next.documents()[s].len();
        if src_len > seq_len {
            return Err(PlanError::SourceTooLong {
                doc_id: r.source_doc_id.clone(),
                len: src_len,
                sequence_length: seq_len,
            });
        }
        ordered.push((batch_t.documents()[p].token_start, r));
    }
    ordered.sort_by_key(|&(start, _)| start);

    let mut tokens: Vec<u32> = batch_t.tokens().to_vec();
    let total = tokens.len();
    let mut spans: Vec<Span> = batch_t
        .documents()
        .iter()
        .map(|d| Span {
            doc_id: d.doc_id.clone(),
            start: d.token_start,
            end: d.token_end,
            text: d.text.clone(),
        })
        .collect();

    let mut report = SwapReport {
        batch_id: plan.batch_id,
        donor_batch_id: plan.donor_batch_id,
        entries: Vec::new(),
        skipped_targets: Vec::new(),
        dropped_docs: Vec::new(),
        truncated_docs: Vec::new(),
        padded_docs: Vec::new(),
        totals: SwapTotals::default(),
        length_rule: "greedy closest token length, longer on ties; reconstructed pairing rule".into(),
        config_hash: None,
    };
    let mut truncated: BTreeMap<String, ()> = BTreeMap::new();
    let mut padded: BTreeMap<String, ()> = BTreeMap::new();

    for (_, r) in ordered {
        let Some(ti) = spans.iter().position(|s| s.doc_id == r.target_doc_id) else {
            report.skipped_targets.push(r.target_doc_id.clone());
            continue;
        };
        let source_doc: &Document = &batch_next.documents()[n_pos[r.source_doc_id.as_str()]];
        let source = batch_next.doc_tokens(source_doc);
        let (ts, te) = (spans[ti].start, spans[ti].end);
        let region_end = ((te - 1) / seq_len + 1) * seq_len;
        let region_end = region_end.min(total);
        let region_len = region_end - ts;
        let target_len = te - ts;

        let mut region: Vec<u32> = Vec::with_capacity(source.len() + region_end - te);
        region.extend_from_slice(source);
        region.extend_from_slice(&tokens[te..region_end]);
        let overflow = region.len().saturating_sub(region_len);
        let pad_tokens = region_len.saturating_sub(region.len());
        region.truncate(region_len);
        region.resize(region_len, pad);
        tokens[ts..region_end].copy_from_slice(&region);

        let delta = source.len() as isize - target_len as isize;
        let mut keep: Vec<bool> = vec![true; spans.len()];
        for (j, s) in spans.iter_mut().enumerate() {
            if j == ti || s.start < te || s.start >= region_end {
                continue;
            }
            let new_start = (s.start as isize + delta) as usize;
            if s.end <= region_end {
                let new_end = ((s.end as isize + delta) as usize).min(region_end);
                if new_start >= region_end {
                    keep[j] = false;
                    continue;
                }
                if new_end - new_start < s.end - s.start {
                    truncated.insert(s.doc_id.clone(), ());
                }
                s.start = new_start;
                s.end = new_end;
            } else {
                // Continues into the next sequence; only its head moves.
                if delta > 0 {
                    truncated.insert(s.doc_id.clone(), ());
                } else if delta < 0 {
                    padded.insert(s.doc_id.clone(), ());
                }
                s.start = new_start.min(region_end);
            }
        }
        let placed = source.len().min(region_len);
        spans[ti] = Span {
            doc_id: source_doc.doc_id.clone(),
            start: ts,
            end: ts + placed,
            text: source_doc.text.clone(),
        };
        let mut j = 0;
        spans.retain(|s| {
            let k = keep[j];
            j += 1;
            if !k {
                report.dropped_docs.push(s.doc_id.clone());
            }
            k
        });

        report.entries.push(SwapEntry {
            target_doc_id: r.target_doc_id.clone(),
            source_doc_id: r.source_doc_id.clone(),
            target_len,
            source_len: source.len(),
            exact_length: source.len() == target_len,
            tokens_truncated: overflow,
            pad_tokens,
        });
    }

    let gone = report.dropped_docs.iter().chain(report.entries.iter().map(|e| &e.target_doc_id));
    for id in gone {
        truncated.remove(id);
        padded.remove(id);
    }
    report.truncated_docs = truncated.into_keys().collect();
    report.padded_docs = padded.into_keys().collect();
    report.finish();

    let batch_id = batch_t.batch_id();
    let documents = spans
        .into_iter()
        .map(|s| Document {
            doc_id: s.doc_id,
            batch_id,
            token_start: s.start,
            token_end: s.end,
            text: s.text,
        })
        .collect();
    let batch = DataBatch::new(batch_id, documents, tokens).expect("rewrite keeps spans disjoint and sorted");
    Ok((batch, report))
}
