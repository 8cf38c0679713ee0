//! Exact entity search over document text.
//!
//! All terms are searched in one pass per document with an Aho-Corasick
//! automaton in overlapping mode, so every occurrence of every term is
//! reported, including occurrences that overlap one another. Positions are
//! Unicode scalar offsets into the document text.

use std::collections::{BTreeMap, BTreeSet};

use aho_corasick::{AhoCorasick, MatchKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DocScore, MatchMethod, MatchSet, Selection};
use crate::corpus::{DataBatch, Document};
use crate::item::EvalItem;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermHit {
    pub doc_id: String,
    pub char_start: usize,
    pub char_end: usize,
    pub term: String,
}

/// Options for entity search. The defaults give case-sensitive exact
/// substring matching with document-level cooccurrence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySearch {
    /// Only accept hits not flanked by alphanumeric characters.
    #[serde(default)]
    pub word_boundary: bool,
    /// Maximum character gap between a subject hit and an object hit for a
    /// cooccurrence. `None` means anywhere in the document.
    #[serde(default)]
    pub window: Option<usize>,
}

struct TermSearcher {
    terms: Vec<String>,
    automaton: Option<AhoCorasick>,
    word_boundary: bool,
}

/// `(term index, char_start, char_end)`
type RawHit = (usize, usize, usize);

impl TermSearcher {
    fn new(terms: Vec<String>, word_boundary: bool) -> Self {
        let automaton = if terms.is_empty() {
            None
        } else {
            Some(
                AhoCorasick::builder()
                    .match_kind(MatchKind::Standard)
                    .build(&terms)
                    .expect("automaton over literal terms"),
            )
        };
        Self {
            terms,
            automaton,
            word_boundary,
        }
    }

    /// Hits sorted by (start, term index).
    fn scan(&self, text: &str) -> Vec<RawHit> {
        let Some(ac) = &self.automaton else {
            return Vec::new();
        };
        let mut byte_hits: Vec<(usize, usize, usize)> = ac
            .find_overlapping_iter(text)
            .map(|m| (m.pattern().as_usize(), m.start(), m.end()))
            .collect();
        if self.word_boundary {
            byte_hits.retain(|&(_, s, e)| {
                let before = text[..s].chars().next_back();
                let after = text[e..].chars().next();
                !before.is_some_and(char::is_alphanumeric)
                    && !after.is_some_and(char::is_alphanumeric)
            });
        }
        if byte_hits.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<RawHit> = if text.is_ascii() {
            byte_hits
        } else {
            let offsets = CharOffsets::new(text);
            byte_hits
                .into_iter()
                .map(|(t, s, e)| (t, offsets.char_at(s), offsets.char_at(e)))
                .collect()
        };
        hits.sort_by_key(|&(t, s, e)| (s, t, e));
        hits
    }
}

/// Maps byte offsets at char boundaries to char offsets.
struct CharOffsets {
    byte_starts: Vec<usize>,
}

impl CharOffsets {
    fn new(text: &str) -> Self {
        let mut byte_starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        byte_starts.push(text.len());
        Self { byte_starts }
    }

    fn char_at(&self, byte: usize) -> usize {
        self.byte_starts
            .binary_search(&byte)
            .expect("match offsets fall on char boundaries")
    }
}

fn unique_terms<'a>(terms: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    terms
        .into_iter()
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Every exact occurrence of every term in every document, in document order
/// and then by position. Empty terms are ignored.
pub fn find_occurrences(batch: &DataBatch, terms: &[String], opts: EntitySearch) -> Vec<TermHit> {
    let searcher = TermSearcher::new(unique_terms(terms.iter().map(String::as_str)), opts.word_boundary);
    batch
        .documents()
        .par_iter()
        .map(|doc| {
            searcher
                .scan(&doc.text)
                .into_iter()
                .map(|(t, s, e)| TermHit {
                    doc_id: doc.doc_id.clone(),
                    char_start: s,
                    char_end: e,
                    term: searcher.terms[t].clone(),
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Items with both entity strings, plus the ids of those without.
fn split_items(items: &[EvalItem]) -> (Vec<(&str, &str, &str)>, Vec<String>) {
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for item in items {
        match item.entity_pair() {
            Some((s, o)) => usable.push((item.item_id.as_str(), s, o)),
            None => skipped.push(item.item_id.clone()),
        }
    }
    (usable, skipped)
}

/// Per-document hit intervals grouped by term index.
fn hits_by_term(searcher: &TermSearcher, doc: &Document) -> BTreeMap<usize, Vec<(usize, usize)>> {
    let mut out: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, s, e) in searcher.scan(&doc.text) {
        out.entry(t).or_default().push((s, e));
    }
    out
}

fn has_disjoint_pair(
    subject: &[(usize, usize)],
    object: &[(usize, usize)],
    window: Option<usize>,
) -> bool {
    match window {
        None => {
            let min_end = object.iter().map(|&(_, e)| e).min().unwrap_or(usize::MAX);
            let max_start = object.iter().map(|&(s, _)| s).max().unwrap_or(0);
            subject
                .iter()
                .any(|&(s, e)| min_end <= s || max_start >= e)
        }
        Some(w) => subject.iter().any(|&(ss, se)| {
            object.iter().any(|&(os, oe)| {
                (se <= os && os - se <= w) || (oe <= ss && ss - oe <= w)
            })
        }),
    }
}

fn run_entity_match(
    batch: &DataBatch,
    items: &[EvalItem],
    opts: EntitySearch,
    method: MatchMethod,
) -> MatchSet {
    let (usable, skipped) = split_items(items);
    let terms = unique_terms(usable.iter().flat_map(|&(_, s, o)| [s, o]));
    let term_idx: BTreeMap<&str, usize> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    // item position -> (subject term, object term)
    let pairs: Vec<(usize, usize)> = usable
        .iter()
        .map(|&(_, s, o)| (term_idx[s], term_idx[o]))
        .collect();
    let mut items_by_term: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(s, o)) in pairs.iter().enumerate() {
        items_by_term.entry(s).or_default().push(i);
        if method == MatchMethod::Occurrence && o != s {
            items_by_term.entry(o).or_default().push(i);
        }
    }
    let searcher = TermSearcher::new(terms, opts.word_boundary);

    let per_doc: Vec<Vec<usize>> = batch
        .documents()
        .par_iter()
        .map(|doc| {
            let hits = hits_by_term(&searcher, doc);
            let mut matched = BTreeSet::new();
            for t in hits.keys() {
                for &i in items_by_term.get(t).map(Vec::as_slice).unwrap_or(&[]) {
                    let (s, o) = pairs[i];
                    let ok = match method {
                        MatchMethod::Occurrence => true,
                        _ => match (hits.get(&s), hits.get(&o)) {
                            (Some(sh), Some(oh)) => has_disjoint_pair(sh, oh, opts.window),
                            _ => false,
                        },
                    };
                    if ok {
                        matched.insert(i);
                    }
                }
            }
            matched.into_iter().collect()
        })
        .collect();

    let mut entries: BTreeMap<String, Vec<DocScore>> = usable
        .iter()
        .map(|&(id, _, _)| (id.to_string(), Vec::new()))
        .collect();
    for (doc, matched) in batch.documents().iter().zip(per_doc) {
        for i in matched {
            entries
                .get_mut(usable[i].0)
                .expect("entry per usable item")
                .push(DocScore {
                    doc_id: doc.doc_id.clone(),
                    score: 1.0,
                });
        }
    }
    MatchSet::new(method, Selection::All, Some(batch.batch_id()), entries)
        .expect("boolean match lists are valid")
        .with_skipped(skipped)
}

/// A document matches an item when it holds a subject hit and an object hit
/// whose character intervals do not intersect. Items lacking a subject or
/// object are skipped and listed in [`MatchSet::skipped`].
pub fn match_cooccurrence(batch: &DataBatch, items: &[EvalItem], opts: EntitySearch) -> MatchSet {
    run_entity_match(batch, items, opts, MatchMethod::Cooccurrence)
}

/// A document matches an item when it mentions the subject or the object.
pub fn match_occurrence(batch: &DataBatch, items: &[EvalItem], opts: EntitySearch) -> MatchSet {
    run_entity_match(batch, items, opts, MatchMethod::Occurrence)
}
