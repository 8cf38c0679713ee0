use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_manifest, CorpusManifest};
use crate::evaluator::{Normalization, ScoreFile};
use crate::io;
use crate::matcher::{MatchMethod, Selection};
use crate::planner::Mode;
use crate::selector::{CorrectnessMatrix, SelectionRule, Step};
use crate::toylab::ToyConfig;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// `learned-at`, `forgotten-at` or `forgotten-at:<m>`.
    pub rule: String,
    /// Intervention step; by default the step with the most targets among
    /// those followed by another batch.
    pub step: Option<Step>,
    pub min_matches: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            rule: "learned-at".into(),
            step: None,
            min_matches: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// `cooccurrence`, `occurrence`, `bm25` or `dense` (short forms accepted).
    pub method: String,
    /// Per-item cap for scored methods.
    pub top_k: usize,
    /// Score cut for scored methods; replaces `top_k` when set.
    pub threshold: Option<f64>,
    pub word_boundary: bool,
    /// Dense scores against the intervened batch and its successor.
    pub dense_scores: Option<PathBuf>,
    pub dense_scores_next: Option<PathBuf>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            method: "cooccurrence".into(),
            top_k: 1000,
            threshold: None,
            word_boundary: false,
            dense_scores: None,
            dense_scores_next: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterveneConfig {
    /// `suppress` or `promote`.
    pub mode: String,
    /// Per-item document cap for scored methods.
    pub k: usize,
    pub max_replacements: Option<usize>,
    /// Defaults to the manifest's pad token.
    pub pad_token: Option<u32>,
}

impl Default for InterveneConfig {
    fn default() -> Self {
        Self {
            mode: "suppress".into(),
            k: 1000,
            max_replacements: None,
            pad_token: None,
        }
    }
}

/// Externally computed choice scores of one retraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRun {
    pub condition: String,
    pub seed: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// `toy`, `file` or `none`.
    pub scorer: String,
    pub norm: String,
    /// Toy-lab config that generated the corpus (`toy` scorer).
    pub toy_config: Option<PathBuf>,
    /// Score files (`file` scorer); runs named `retrained` are the reference.
    pub scores: Vec<ScoreRun>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            scorer: "none".into(),
            norm: "none".into(),
            toy_config: None,
            scores: Vec::new(),
        }
    }
}

/// One experiment: inputs, stage parameters and the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub items: PathBuf,
    /// Item x checkpoint outcomes; the toy scorer can supply them instead.
    pub correctness: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub select: SelectConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub intervene: InterveneConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.toml"),
            items: PathBuf::from("items.jsonl"),
            correctness: None,
            out: PathBuf::from("out"),
            seeds: vec![1, 2, 3, 4, 5],
            select: SelectConfig::default(),
            matching: MatchConfig::default(),
            intervene: InterveneConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths in it are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.items, &mut cfg.out] {
            rebase(base, p);
        }
        for p in [
            &mut cfg.correctness,
            &mut cfg.matching.dense_scores,
            &mut cfg.matching.dense_scores_next,
            &mut cfg.evaluate.toy_config,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
        for run in &mut cfg.evaluate.scores {
            rebase(base, &mut run.path);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hash of everything except the output location, so the same
    /// experiment written to two places carries one hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        io::config_hash(&c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    None,
    Toy,
    File,
}

/// The string-valued parts of a config, parsed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub rule: SelectionRule,
    pub method: MatchMethod,
    pub mode: Mode,
    pub norm: Normalization,
    pub scorer: ScorerKind,
    pub selection: Selection,
}

struct Findings(Vec<Finding>);

impl Findings {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Finding {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Finding {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        });
    }
}

fn parse<T: std::str::FromStr>(f: &mut Findings, field: &str, value: &str) -> Option<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| f.error(field, format!("{e}"))).ok()
}

/// Parses the string-valued options, reporting each bad one.
pub fn resolve(config: &ExperimentConfig) -> (Option<Resolved>, Vec<Finding>) {
    let mut f = Findings(Vec::new());
    let rule = parse::<SelectionRule>(&mut f, "select.rule", &config.select.rule);
    let method = parse::<MatchMethod>(&mut f, "match.method", &config.matching.method);
    let mode = parse::<Mode>(&mut f, "intervene.mode", &config.intervene.mode);
    let norm = parse::<Normalization>(&mut f, "evaluate.norm", &config.evaluate.norm);
    let scorer = match config.evaluate.scorer.as_str() {
        "none" => Some(ScorerKind::None),
        "toy" => Some(ScorerKind::Toy),
        "file" => Some(ScorerKind::File),
        other => {
            f.error("evaluate.scorer", format!("unknown scorer {other:?}; expected toy, file or none"));
            None
        }
    };
    let selection = match config.matching.threshold {
        Some(tau) if !tau.is_finite() => {
            f.error("match.threshold", "threshold must be finite");
            None
        }
        Some(tau) => Some(Selection::Threshold(tau)),
        None if config.matching.top_k == 0 => {
            f.error("match.top_k", "top_k must be at least 1");
            None
        }
        None => Some(Selection::TopK(config.matching.top_k)),
    };
    let resolved = match (rule, method, mode, norm, scorer, selection) {
        (Some(rule), Some(method), Some(mode), Some(norm), Some(scorer), Some(selection)) => Some(Resolved {
            rule,
            method,
            mode,
            norm,
            scorer,
            selection,
        }),
        _ => None,
    };
    (resolved, f.0)
}

/// Every problem that would stop `run_pipeline`, plus warnings. The config
/// is runnable iff no finding is an error.
pub fn validate(config: &ExperimentConfig) -> Vec<Finding> {
    let (resolved, findings) = resolve(config);
    let mut f = Findings(findings);

    let manifest = if config.manifest.is_file() {
        match load_manifest(&config.manifest) {
            Ok(m) => Some(m),
            Err(e) => {
                f.error("manifest", e.to_string());
                None
            }
        }
    } else {
        f.error("manifest", format!("{} does not exist", config.manifest.display()));
        None
    };
    if !config.items.is_file() {
        f.error("items", format!("{} does not exist", config.items.display()));
    }

    let matrix = match &config.correctness {
        Some(p) if !p.is_file() => {
            f.error("correctness", format!("{} does not exist", p.display()));
            None
        }
        Some(p) => match CorrectnessMatrix::load(p) {
            Ok(m) => Some(m),
            Err(e) => {
                f.error("correctness", e.to_string());
                None
            }
        },
        None => None,
    };

    let Some(r) = resolved else {
        return f.0;
    };

    if config.correctness.is_none() && r.scorer != ScorerKind::Toy {
        f.error("correctness", "required unless the toy scorer supplies checkpoints");
    }

    if let (Some(m), Some(step)) = (&manifest, config.select.step) {
        check_step(&mut f, m, matrix.as_ref(), step, &r);
    }

    if r.method == MatchMethod::Dense {
        for (field, p) in [
            ("match.dense_scores", &config.matching.dense_scores),
            ("match.dense_scores_next", &config.matching.dense_scores_next),
        ] {
            match p {
                None => f.error(field, "dense matching needs precomputed scores for both batches"),
                Some(p) if !p.is_file() => f.error(field, format!("{} does not exist", p.display())),
                Some(_) => {}
            }
        }
    }
    if !r.method.is_scored() && config.matching.threshold.is_some() {
        f.warn("match.threshold", format!("ignored by boolean method {}", r.method));
    }
    if config.intervene.k == 0 {
        f.error("intervene.k", "k must be at least 1");
    }

    match r.scorer {
        ScorerKind::None => {
            f.warn("evaluate.scorer", "no scorer: the evaluation report is not written");
        }
        ScorerKind::Toy => {
            if config.seeds.len() < 2 {
                f.error("seeds", format!("the toy scorer needs at least two seeds, got {}", config.seeds.len()));
            }
            match &config.evaluate.toy_config {
                Some(p) if !p.is_file() => f.error("evaluate.toy_config", format!("{} does not exist", p.display())),
                Some(p) => match load_toy_config(p) {
                    Ok(toy) => {
                        if let Some(m) = &manifest {
                            let spec_hash = io::config_hash(&toy.corpus);
                            if m.config_hash.as_deref() != Some(spec_hash.as_str()) {
                                f.error("evaluate.toy_config", "corpus spec does not match the manifest's config hash");
                            }
                        }
                    }
                    Err(e) => f.error("evaluate.toy_config", e.to_string()),
                },
                None => {
                    if let Some(m) = &manifest {
                        let spec_hash = io::config_hash(&ToyConfig::default().corpus);
                        if m.config_hash.as_deref() != Some(spec_hash.as_str()) {
                            f.error("evaluate.toy_config", "default corpus spec does not match the manifest; set toy_config");
                        }
                    }
                }
            }
            if r.norm != Normalization::None {
                f.warn("evaluate.norm", "the toy scorer ranks raw log-probabilities; norm is ignored");
            }
        }
        ScorerKind::File => {
            let runs = &config.evaluate.scores;
            if runs.is_empty() {
                f.error("evaluate.scores", "the file scorer needs score files");
            }
            if !runs.iter().any(|s| s.condition == "retrained") {
                f.error("evaluate.scores", "no run has condition \"retrained\"");
            }
            for (i, run) in runs.iter().enumerate() {
                let field = format!("evaluate.scores[{i}]");
                if !run.path.is_file() {
                    f.error(&field, format!("{} does not exist", run.path.display()));
                    continue;
                }
                if r.norm == Normalization::Pmi {
                    match ScoreFile::load(&run.path) {
                        Ok(s) if !s.has_priors() => f.error(&field, "pmi normalization needs prior_logprob on every choice"),
                        Ok(_) => {}
                        Err(e) => f.error(&field, e.to_string()),
                    }
                }
            }
        }
    }
    f.0
}

fn check_step(f: &mut Findings, m: &CorpusManifest, matrix: Option<&CorrectnessMatrix>, step: Step, r: &Resolved) {
    if m.descriptor(step).is_err() {
        f.error("select.step", format!("no batch {step} in the manifest"));
        return;
    }
    if m.successor(step).is_none() {
        let what = match r.mode {
            Mode::Promote => "promote mode needs a successor batch to move documents from",
            Mode::Suppress => "suppress mode needs a successor batch to draw replacements from",
        };
        f.error("select.step", format!("batch {step} is the last batch: {what}"));
    }
    if let Some(matrix) = matrix {
        if matrix.step_index(step).is_err() {
            f.error("select.step", format!("step {step} is not a checkpoint in the correctness file"));
        } else if r.mode == Mode::Promote && r.rule == SelectionRule::LearnedAt && matrix.successor(step).is_err() {
            f.error("select.step", format!("promote mode needs a checkpoint after step {step}"));
        }
    }
}

pub fn load_toy_config(path: &Path) -> Result<ToyConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}
