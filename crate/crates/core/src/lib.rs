//! Interventional analysis of pretraining data.
//!
//! The crate covers the three stages of the recipe:
//!
//! * selecting evaluation items that exhibit a behavior at a checkpoint
//!   ([`selector`]),
//! * matching pretraining documents to those items ([`matcher`]),
//! * rewriting the data batch preceding the checkpoint ([`planner`]),
//!
//! plus the evaluation metric ([`evaluator`]), storage for tokenized batches
//! ([`corpus`]), a small synthetic training lab used to check the whole loop
//! end to end ([`toylab`]), and a config-driven driver ([`pipeline`]).

pub mod corpus;
pub mod evaluator;
pub mod io;
pub mod item;
pub mod matcher;
pub mod pipeline;
pub mod planner;
pub mod selector;
pub mod toylab;

pub use corpus::{BatchDescriptor, CorpusError, CorpusManifest, DataBatch, Document};
pub use item::EvalItem;
pub use matcher::{MatchMethod, MatchSet, Selection};
pub use planner::{InterventionPlan, Mode, SwapReport};
pub use selector::{CorrectnessMatrix, TargetSelection};
