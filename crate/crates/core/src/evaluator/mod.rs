//! The evaluation metric: cloze multiple-choice ranking, accuracy, run
//! aggregation, the majority baseline, and relevance-audit helpers.

mod audit;
mod metrics;
mod scoring;

use crate::io::RecordError;

pub use audit::{
    cohens_kappa, export_audit, relevance_rates, AnnotationRecord, AuditExport, AuditPrompt,
    AuditRecord, Label,
};
pub use metrics::{
    accuracy, aggregate_runs, delta_accuracy, summarize_condition, ConditionSummary, MajorityBaseline, RunResult,
    SeedResult,
};
pub use scoring::{
    predict, rank_choices, render_prompt, ChoiceScore, ChoiceScorer, Normalization, ScoreFile,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("item {0}: empty question")]
    EmptyQuestion(String),
    #[error("item {0}: need at least two choice scores")]
    TooFewChoices(String),
    #[error("item {item_id}: choice {choice_index} scored twice")]
    DuplicateChoice { item_id: String, choice_index: usize },
    #[error("scores for more than one item ({0} and {1}) passed together")]
    MixedItems(String, String),
    #[error("item {item_id}: choice {choice_index} has no prior log-probability, required for pmi")]
    MissingPrior { item_id: String, choice_index: usize },
    #[error("item {item_id}: choice {choice_index} has an invalid score record")]
    InvalidScore { item_id: String, choice_index: usize },
    #[error("item {0}: no scores")]
    MissingScores(String),
    #[error("item {item_id}: predicted choice {choice_index} out of range")]
    ChoiceOutOfRange { item_id: String, choice_index: usize },
    #[error("accuracy over an empty item set")]
    EmptySet,
    #[error("no prediction for item {0}")]
    MissingPrediction(String),
    #[error("item {0}: missing relation or object")]
    MissingRelation(String),
    #[error("relation {0} absent from training set")]
    UnknownRelation(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("run for condition {found} passed when aggregating {expected}")]
    MixedConditions { expected: String, found: String },
    #[error("annotation keys differ: {0}")]
    KeyMismatch(String),
    #[error("annotation key labelled twice by one annotator: {0}")]
    DuplicateAnnotation(String),
    #[error("kappa undefined: chance agreement is 1 but observed agreement is {0}")]
    UndefinedKappa(f64),
    #[error("doc {0} not found")]
    UnknownDoc(String),
    #[error("unknown normalization {0:?}")]
    UnknownNormalization(String),
}
