//! Desk-scale synthetic training lab for checking the recipe end to end.

mod experiment;
mod model;
mod synth;

pub use experiment::{chance_band, plot_csv, run_experiment, ExperimentReport, ReportRecord, ToyConfig, ToyLab};
pub use crate::evaluator::{ConditionSummary, SeedResult};
pub use model::{evaluate, train, train_batch, ModelConfig, ToyModel, ToyScorer, TrainRun};
pub use synth::{
    generate_corpus, Fact, MentionSchedule, Relation, RelationSpec, SyntheticSpec, ToyCorpus, ToyWorld, Triple, EOS,
    PAD,
};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::evaluator::EvalError;
use crate::io::RecordError;
use crate::matcher::MatchError;
use crate::planner::PlanError;
use crate::selector::SelectError;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy spec: {0}")]
    InvalidSpec(String),
    #[error("vocabulary too small: {needed} {kind} words requested, {capacity} available")]
    VocabularyTooSmall {
        kind: &'static str,
        needed: usize,
        capacity: usize,
    },
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error("no checkpoint at step {0}")]
    UnknownCheckpoint(u64),
    #[error("at least two seeds are required, got {0}")]
    TooFewSeeds(usize),
    #[error("step {0} is not a batch end with a following batch")]
    BadStep(u64),
    #[error("no eligible step has any target item")]
    NoTargets,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Record(#[from] RecordError),
}
