//! Config-driven runs of the whole recipe: select targets, match documents,
//! rewrite the batch, evaluate. Every artifact records the config hash and
//! is written atomically.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    load_toy_config, resolve, validate, EvaluateConfig, ExperimentConfig, Finding, InterveneConfig, MatchConfig,
    Resolved, ScoreRun, ScorerKind, SelectConfig, Severity,
};

use crate::corpus::{load_manifest, read_batch, write_corpus, CorpusError, CorpusManifest, DataBatch};
use crate::evaluator::{accuracy, predict, summarize_condition, ConditionSummary, EvalError, ScoreFile, SeedResult};
use crate::io::{self, RecordError};
use crate::item::{load_items, EvalItem, ItemError};
use crate::matcher::{
    ingest_dense_scores, match_bm25, match_cooccurrence, match_occurrence, Analyzer, Bm25Params, EntitySearch,
    MatchError, MatchMethod, MatchSet,
};
use crate::planner::{apply_plan, plan_promote, plan_suppress, Mode, PlanConfig, PlanError};
use crate::selector::{
    filter_by_matches, select_targets, select_with_rule, CorrectnessMatrix, SelectError, SelectionRule, Step,
    TargetSelection,
};
use crate::toylab::{chance_band, ToyError, ToyLab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Select,
    Match,
    Intervene,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Select => "select",
            Stage::Match => "match",
            Stage::Intervene => "intervene",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Select => 10,
            Stage::Match => 11,
            Stage::Intervene => 12,
            Stage::Evaluate => 13,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Item(#[from] ItemError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("config is not runnable:\n{}", .0.iter().map(|f| format!("  {f}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Finding>),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Invalid(_) => 2,
            PipelineError::Stage { stage, .. } => stage.exit_code(),
        }
    }
}

trait InStage<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> InStage<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

/// Accuracy of every run on the target and control groups, with per-condition
/// summaries against the retrained runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub step: Step,
    pub mode: Mode,
    pub method: MatchMethod,
    pub scorer: String,
    pub norm: String,
    pub target_count: usize,
    pub control_count: usize,
    /// Binomial 95% band of pooled target accuracy under uniform guessing.
    pub chance_band: [f64; 2],
    pub runs: Vec<SeedResult>,
    pub summaries: Vec<ConditionSummary>,
    pub config_hash: String,
}

/// Where `run_pipeline` put its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub config_hash: String,
    pub selection: PathBuf,
    pub matches: PathBuf,
    pub matches_next: PathBuf,
    pub plan: PathBuf,
    pub batch_manifest: PathBuf,
    pub swap_report: PathBuf,
    pub evaluation: Option<PathBuf>,
}

impl PipelineOutput {
    fn new(out: &Path, config_hash: String, evaluate: bool) -> Self {
        Self {
            config_hash,
            selection: out.join("selection.json"),
            matches: out.join("matches.jsonl"),
            matches_next: out.join("matches_next.jsonl"),
            plan: out.join("plan.jsonl"),
            batch_manifest: out.join("batch").join("manifest.toml"),
            swap_report: out.join("swap_report.json"),
            evaluation: evaluate.then(|| out.join("evaluation.json")),
        }
    }

    pub fn artifacts(&self) -> Vec<&Path> {
        let mut out = vec![
            self.selection.as_path(),
            self.matches.as_path(),
            self.matches_next.as_path(),
            self.plan.as_path(),
            self.batch_manifest.as_path(),
            self.swap_report.as_path(),
        ];
        out.extend(self.evaluation.as_deref());
        out
    }
}

/// Steps that have a following batch, in training order.
fn eligible_steps(manifest: &CorpusManifest, matrix: &CorrectnessMatrix) -> Vec<Step> {
    manifest
        .batch_ids()
        .into_iter()
        .filter(|&s| manifest.successor(s).is_some() && matrix.step_index(s).is_ok())
        .collect()
}

fn selection_at(
    matrix: &CorrectnessMatrix,
    step: Step,
    rule: SelectionRule,
    mode: Mode,
) -> Result<TargetSelection, SelectError> {
    match rule {
        SelectionRule::LearnedAt => select_targets(matrix, step, mode),
        other => {
            let mut sel = select_with_rule(matrix, step, other)?;
            sel.mode = Some(mode);
            Ok(sel)
        }
    }
}

fn choose_step(
    manifest: &CorpusManifest,
    matrix: &CorrectnessMatrix,
    rule: SelectionRule,
    mode: Mode,
) -> Result<Step, StageError> {
    let mut best: Option<(usize, Step)> = None;
    for step in eligible_steps(manifest, matrix) {
        let Ok(sel) = selection_at(matrix, step, rule, mode) else {
            continue;
        };
        let n = sel.targets.len();
        if n > 0 && best.is_none_or(|(b, _)| n > b) {
            best = Some((n, step));
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| StageError::Other(format!("no batch-end step has any {} target", rule.name())))
}

fn match_batch(
    config: &ExperimentConfig,
    r: &Resolved,
    batch: &DataBatch,
    items: &[EvalItem],
    dense: Option<&PathBuf>,
) -> Result<MatchSet, MatchError> {
    let search = EntitySearch {
        word_boundary: config.matching.word_boundary,
        window: None,
    };
    match r.method {
        MatchMethod::Cooccurrence => Ok(match_cooccurrence(batch, items, search)),
        MatchMethod::Occurrence => Ok(match_occurrence(batch, items, search)),
        MatchMethod::Bm25 => match_bm25(batch, items, &Analyzer::standard(), Bm25Params::default(), r.selection),
        MatchMethod::Dense => {
            let path = dense.expect("validated: dense score paths present");
            ingest_dense_scores(path, items, r.selection)
        }
    }
}

/// Validates `config` and runs every stage, writing artifacts under
/// `config.out`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutput, PipelineError> {
    let findings = validate(config);
    if findings.iter().any(|f| f.severity == Severity::Error) {
        return Err(PipelineError::Invalid(
            findings.into_iter().filter(|f| f.severity == Severity::Error).collect(),
        ));
    }
    let (Some(r), _) = resolve(config) else {
        unreachable!("validated config resolves");
    };
    let hash = config.hash();
    let out = PipelineOutput::new(&config.out, hash.clone(), r.scorer != ScorerKind::None);

    // Select.
    let manifest = load_manifest(&config.manifest).stage(Stage::Select)?;
    let items = load_items(&config.items).stage(Stage::Select)?;
    let toy = match r.scorer {
        ScorerKind::Toy => {
            let toy_cfg = match &config.evaluate.toy_config {
                Some(p) => load_toy_config(p)?,
                None => Default::default(),
            };
            Some(ToyLab::prepare(toy_cfg).stage(Stage::Select)?)
        }
        _ => None,
    };
    let matrix = match (&config.correctness, &toy) {
        (Some(p), _) => CorrectnessMatrix::load(p).stage(Stage::Select)?,
        (None, Some(lab)) => lab.baseline.matrix.clone(),
        (None, None) => unreachable!("validated: correctness or toy scorer"),
    };
    let step = match config.select.step {
        Some(s) => s,
        None => choose_step(&manifest, &matrix, r.rule, r.mode).stage(Stage::Select)?,
    };
    let mut selection = selection_at(&matrix, step, r.rule, r.mode).stage(Stage::Select)?;
    let next_id = manifest
        .successor(step)
        .ok_or_else(|| StageError::Other(format!("no batch after {step}")))
        .stage(Stage::Select)?;

    // Match.
    let batch_t = read_batch(&manifest, step).stage(Stage::Match)?;
    let batch_next = read_batch(&manifest, next_id).stage(Stage::Match)?;
    let matches_t = match_batch(config, &r, &batch_t, &items, config.matching.dense_scores.as_ref())
        .stage(Stage::Match)?;
    let matches_next = match_batch(config, &r, &batch_next, &items, config.matching.dense_scores_next.as_ref())
        .stage(Stage::Match)?;
    if config.select.min_matches > 0 {
        let counted = match r.mode {
            Mode::Suppress => &matches_t,
            Mode::Promote => &matches_next,
        };
        selection = filter_by_matches(&selection, counted, config.select.min_matches);
    }
    selection.config_hash = Some(hash.clone());
    selection.write(&out.selection).stage(Stage::Select)?;
    matches_t.write(&out.matches, Some(&hash)).stage(Stage::Match)?;
    matches_next.write(&out.matches_next, Some(&hash)).stage(Stage::Match)?;

    // Intervene.
    let targets = &selection.targets;
    let mut plan_cfg = PlanConfig::new(
        manifest.sequence_length,
        config.intervene.pad_token.unwrap_or(manifest.pad_token),
    );
    plan_cfg.k = config.intervene.k;
    plan_cfg.max_replacements = config.intervene.max_replacements;
    let plan = match r.mode {
        Mode::Suppress => plan_suppress(&matches_t, &matches_next, targets, &batch_t, &batch_next, &plan_cfg),
        Mode::Promote => plan_promote(&matches_t, &matches_next, targets, &batch_t, &batch_next, &plan_cfg),
    }
    .stage(Stage::Intervene)?;
    let (batch_int, mut swap) = apply_plan(&plan, &batch_t, &batch_next).stage(Stage::Intervene)?;
    swap.config_hash = Some(hash.clone());
    plan.write(&out.plan, Some(&hash)).stage(Stage::Intervene)?;
    let template = CorpusManifest {
        config_hash: Some(hash.clone()),
        ..manifest.clone()
    };
    let batch_dir = out.batch_manifest.parent().expect("batch dir");
    write_corpus(&template, std::slice::from_ref(&batch_int), batch_dir).stage(Stage::Intervene)?;
    io::write_json(&out.swap_report, &swap).stage(Stage::Intervene)?;

    // Evaluate.
    if let Some(path) = &out.evaluation {
        let report = evaluate_stage(config, &r, &selection, &items, toy.as_ref(), &batch_t, &batch_int, &hash)
            .stage(Stage::Evaluate)?;
        io::write_json(path, &report).stage(Stage::Evaluate)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_stage(
    config: &ExperimentConfig,
    r: &Resolved,
    selection: &TargetSelection,
    items: &[EvalItem],
    toy: Option<&ToyLab>,
    batch_t: &DataBatch,
    batch_int: &DataBatch,
    hash: &str,
) -> Result<EvaluationReport, StageError> {
    let targets = &selection.targets;
    let control = &selection.control;
    if targets.is_empty() {
        return Err(StageError::Eval(EvalError::EmptySet));
    }
    let group_acc = |correct: &std::collections::BTreeMap<String, bool>| -> Result<(f64, f64), EvalError> {
        let c = if control.is_empty() { f64::NAN } else { accuracy(correct, control)? };
        Ok((accuracy(correct, targets)?, c))
    };
    let condition = format!("{}-{}", r.mode, r.method);
    let mut runs = Vec::new();
    match r.scorer {
        ScorerKind::Toy => {
            let lab = toy.expect("toy scorer has a lab");
            for &seed in &config.seeds {
                for (name, batch) in [("retrained", batch_t), (condition.as_str(), batch_int)] {
                    let correct = lab.retrain(selection.step, batch, seed)?;
                    let (t, c) = group_acc(&correct)?;
                    runs.push(SeedResult {
                        condition: name.to_string(),
                        seed,
                        target_accuracy: t,
                        control_accuracy: c,
                    });
                }
            }
        }
        ScorerKind::File => {
            for run in &config.evaluate.scores {
                let scores = ScoreFile::load(&run.path)?;
                let correct = predict(&scores, items, r.norm)?;
                let (t, c) = group_acc(&correct)?;
                runs.push(SeedResult {
                    condition: run.condition.clone(),
                    seed: run.seed,
                    target_accuracy: t,
                    control_accuracy: c,
                });
            }
        }
        ScorerKind::None => unreachable!("no evaluation without a scorer"),
    }
    let summaries = summarize_runs(&runs)?;
    let choices = items.first().map_or(4, |i| i.choices.len());
    let seeds = runs.iter().filter(|r| r.condition == "retrained").count();
    Ok(EvaluationReport {
        step: selection.step,
        mode: r.mode,
        method: r.method,
        scorer: config.evaluate.scorer.clone(),
        norm: r.norm.to_string(),
        target_count: targets.len(),
        control_count: control.len(),
        chance_band: chance_band(targets.len() * seeds, 1.0 / choices as f64, 0.95),
        runs,
        summaries,
        config_hash: hash.to_string(),
    })
}

/// Pairs every condition's runs with the retrained runs of the same seed.
fn summarize_runs(runs: &[SeedResult]) -> Result<Vec<ConditionSummary>, StageError> {
    let conditions: BTreeSet<&str> = runs.iter().map(|r| r.condition.as_str()).collect();
    let mut ordered: Vec<&str> = vec!["retrained"];
    ordered.extend(conditions.iter().copied().filter(|c| *c != "retrained"));
    let mut out = Vec::new();
    for cond in ordered {
        let mut these = Vec::new();
        let mut base = Vec::new();
        for run in runs.iter().filter(|r| r.condition == cond) {
            let reference = runs
                .iter()
                .find(|r| r.condition == "retrained" && r.seed == run.seed)
                .ok_or_else(|| StageError::Other(format!("no retrained run for seed {} of {cond}", run.seed)))?;
            these.push(run);
            base.push(reference);
        }
        if these.is_empty() {
            return Err(StageError::Eval(EvalError::NoRuns));
        }
        out.push(summarize_condition(cond, &these, &base));
    }
    Ok(out)
}

/// Hex SHA-256 of each artifact's bytes, keyed by path relative to `out`.
pub fn artifact_hashes(output: &PipelineOutput, out: &Path) -> Result<Vec<(String, String)>, RecordError> {
    use sha2::{Digest, Sha256};
    let mut files: Vec<PathBuf> = output.artifacts().iter().map(|p| p.to_path_buf()).collect();
    let batch_dir = output.batch_manifest.parent().expect("batch dir");
    let mut batch_files: Vec<PathBuf> = std::fs::read_dir(batch_dir)
        .map_err(|e| RecordError::io(batch_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p != &output.batch_manifest)
        .collect();
    batch_files.sort();
    files.extend(batch_files);
    files
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(|e| RecordError::io(&p, e))?;
            let rel = p.strip_prefix(out).unwrap_or(&p).display().to_string();
            Ok((rel, hex::encode(Sha256::digest(&bytes))))
        })
        .collect()
}
