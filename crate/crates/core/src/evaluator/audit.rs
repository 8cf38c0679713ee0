//! Relevance audits of matched documents: prompt export for an external
//! judge, and agreement/relevance statistics over returned annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::DataBatch;
use crate::item::EvalItem;
use crate::matcher::MatchSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuditPrompt {
    #[serde(rename = "correct answer")]
    CorrectAnswer,
    #[serde(rename = "educated guess")]
    EducatedGuess,
    #[serde(rename = "related topic")]
    RelatedTopic,
}

const PREAMBLE: &str =
    "You will be given a question or question stem and its correct answer, along with a document.";

impl AuditPrompt {
    pub const ALL: [AuditPrompt; 3] = [
        AuditPrompt::CorrectAnswer,
        AuditPrompt::EducatedGuess,
        AuditPrompt::RelatedTopic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AuditPrompt::CorrectAnswer => "correct answer",
            AuditPrompt::EducatedGuess => "educated guess",
            AuditPrompt::RelatedTopic => "related topic",
        }
    }

    fn instruction(self) -> &'static str {
        match self {
            AuditPrompt::CorrectAnswer => {
                "Output \"yes\" if the document contains enough information to correctly answer the question, and \"no\" otherwise. Only output \"yes\" or \"no\"."
            }
            AuditPrompt::EducatedGuess => {
                "Output \"yes\" if the document contains enough information to make an educated guess about the answer, and \"no\" otherwise. The document does not have to have enough information to be able to correctly answer the question. Only output \"yes\" or \"no\"."
            }
            AuditPrompt::RelatedTopic => {
                "Output \"yes\" if the document is topically related to the question and answer, and \"no\" otherwise. The document does not have to have enough information to be able to correctly answer the question. Only output \"yes\" or \"no\"."
            }
        }
    }

    pub fn render(self, question: &str, answer: &str, document: &str) -> String {
        format!(
            "{PREAMBLE} {}\n\nQuestion: {question}\nAnswer: {answer}\nDocument: {document}",
            self.instruction()
        )
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s || p.slug() == s)
    }

    pub fn slug(self) -> &'static str {
        match self {
            AuditPrompt::CorrectAnswer => "correct-answer",
            AuditPrompt::EducatedGuess => "educated-guess",
            AuditPrompt::RelatedTopic => "related-topic",
        }
    }
}

impl fmt::Display for AuditPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub item_id: String,
    pub doc_id: String,
    pub prompt_name: AuditPrompt,
    pub prompt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditExport {
    pub records: Vec<AuditRecord>,
    pub warnings: Vec<String>,
}

/// Prompts for up to `top_n` matched documents per item. Scored match sets
/// contribute their highest-scoring documents; boolean ones a seeded uniform
/// sample.
pub fn export_audit(
    items: &[EvalItem],
    match_set: &MatchSet,
    batch: &DataBatch,
    top_n: usize,
    prompt: AuditPrompt,
    seed: u64,
) -> Result<AuditExport, EvalError> {
    let positions = batch.positions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AuditExport::default();
    for item in items {
        if !match_set.covers(&item.item_id) || top_n == 0 {
            continue;
        }
        let docs = match_set.docs(&item.item_id);
        if docs.len() < top_n {
            out.warnings.push(format!(
                "item {}: {} matched documents, fewer than {top_n}; exporting all",
                item.item_id,
                docs.len()
            ));
        }
        let chosen: Vec<&str> = if match_set.method.is_scored() {
            docs.iter().take(top_n).map(|d| d.doc_id.as_str()).collect()
        } else {
            let mut picked: Vec<&str> = docs
                .choose_multiple(&mut rng, top_n.min(docs.len()))
                .map(|d| d.doc_id.as_str())
                .collect();
            picked.sort_unstable();
            picked
        };
        for doc_id in chosen {
            let &pos = positions
                .get(doc_id)
                .ok_or_else(|| EvalError::UnknownDoc(doc_id.to_string()))?;
            let text = &batch.documents()[pos].text;
            out.records.push(AuditRecord {
                item_id: item.item_id.clone(),
                doc_id: doc_id.to_string(),
                prompt_name: prompt,
                prompt: prompt.render(&item.question, item.answer(), text),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub doc_id: String,
    pub prompt_name: AuditPrompt,
    pub label: Label,
    pub annotator: String,
}

type Key = (String, String, AuditPrompt);

fn keyed(records: &[AnnotationRecord]) -> Result<BTreeMap<Key, Label>, EvalError> {
    let mut out = BTreeMap::new();
    for r in records {
        let key = (r.item_id.clone(), r.doc_id.clone(), r.prompt_name);
        if out.insert(key, r.label).is_some() {
            return Err(EvalError::DuplicateAnnotation(format!(
                "({}, {}, {})",
                r.item_id, r.doc_id, r.prompt_name
            )));
        }
    }
    Ok(out)
}

/// Cohen's kappa between two annotators over identical (item, doc, prompt)
/// keys. When both annotators use one and the same label throughout, chance
/// agreement is 1 and kappa is taken as 1.
pub fn cohens_kappa(a: &[AnnotationRecord], b: &[AnnotationRecord]) -> Result<f64, EvalError> {
    let ka = keyed(a)?;
    let kb = keyed(b)?;
    let keys_a: BTreeSet<&Key> = ka.keys().collect();
    let keys_b: BTreeSet<&Key> = kb.keys().collect();
    if keys_a != keys_b {
        let only_a = keys_a.difference(&keys_b).count();
        let only_b = keys_b.difference(&keys_a).count();
        return Err(EvalError::KeyMismatch(format!(
            "{only_a} keys only in the first set, {only_b} only in the second"
        )));
    }
    if ka.is_empty() {
        return Err(EvalError::KeyMismatch("no annotations".into()));
    }
    let n = ka.len() as f64;
    let (mut yy, mut yn, mut ny, mut nn) = (0usize, 0usize, 0usize, 0usize);
    for (key, la) in &ka {
        match (la, kb[key]) {
            (Label::Yes, Label::Yes) => yy += 1,
            (Label::Yes, Label::No) => yn += 1,
            (Label::No, Label::Yes) => ny += 1,
            (Label::No, Label::No) => nn += 1,
        }
    }
    let p_o = (yy + nn) as f64 / n;
    let a_yes = (yy + yn) as f64 / n;
    let b_yes = (yy + ny) as f64 / n;
    let p_e = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    if p_e == 1.0 {
        return if p_o == 1.0 {
            Ok(1.0)
        } else {
            Err(EvalError::UndefinedKappa(p_o))
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Share of "yes" labels per prompt.
pub fn relevance_rates(records: &[AnnotationRecord]) -> BTreeMap<AuditPrompt, f64> {
    let mut counts: BTreeMap<AuditPrompt, (usize, usize)> = BTreeMap::new();
    for r in records {
        let c = counts.entry(r.prompt_name).or_default();
        c.1 += 1;
        if r.label == Label::Yes {
            c.0 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(p, (yes, total))| (p, yes as f64 / total as f64))
        .collect()
}
