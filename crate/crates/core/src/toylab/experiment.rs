//! Retraining experiments on the synthetic corpus.
//!
//! A baseline run over all batches yields checkpoints and a correctness
//! matrix. For a chosen step `t`, targets are selected, matched documents in
//! `D_t` and `D_{t+1}` drive an intervention plan, and for every seed the
//! checkpoint before `t` is trained once on the original `D_t` and once on
//! the rewritten batch with the same noise seed.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{evaluate, train, train_batch, ModelConfig, ToyModel, TrainRun};
use super::synth::{generate_corpus, SyntheticSpec, ToyCorpus, PAD};
use super::ToyError;
use crate::corpus::DataBatch;
use crate::evaluator::{accuracy, summarize_condition, ConditionSummary, SeedResult};
use crate::io::{self, RecordError};
use crate::matcher::{match_bm25, match_cooccurrence, match_occurrence, Analyzer, Bm25Params, EntitySearch};
use crate::matcher::{MatchMethod, MatchSet, Selection};
use crate::planner::{apply_plan, plan_promote, plan_suppress, replacement_fraction, Mode, PlanConfig};
use crate::selector::{select_targets, Step, TargetSelection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub corpus: SyntheticSpec,
    pub model: ModelConfig,
    /// Noise seed of the baseline run.
    pub train_seed: u64,
    /// Intervention step; by default the eligible step with most targets.
    pub step: Option<Step>,
    /// Per-item document cap for scored matching.
    pub top_k: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticSpec::default(),
            model: ModelConfig::default(),
            train_seed: 0,
            step: None,
            top_k: 1000,
        }
    }
}

impl ToyConfig {
    pub fn hash(&self) -> String {
        io::config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub method: MatchMethod,
    pub step: Step,
    /// Checkpoint the retraining starts from.
    pub start_step: Step,
    pub donor_batch_id: u64,
    pub targets: Vec<String>,
    pub control_count: usize,
    pub seeds: Vec<u64>,
    /// Baseline checkpoint accuracy at `step`.
    pub checkpoint_target_accuracy: f64,
    pub checkpoint_control_accuracy: f64,
    pub replacements: usize,
    pub replacement_fraction: f64,
    pub exact_length_rate: f64,
    pub token_count_preserved: bool,
    /// Binomial 95% band of pooled target accuracy under 4-choice guessing.
    pub chance_band: [f64; 2],
    pub runs: Vec<SeedResult>,
    pub summaries: Vec<ConditionSummary>,
    pub config_hash: String,
}

impl ExperimentReport {
    pub fn condition(&self) -> String {
        format!("{}-{}", self.mode, self.method)
    }

    pub fn summary(&self, condition: &str) -> Option<&ConditionSummary> {
        self.summaries.iter().find(|s| s.condition == condition)
    }

    pub fn retrained(&self) -> &ConditionSummary {
        self.summary("retrained").expect("retrained summary is always present")
    }

    pub fn intervened(&self) -> &ConditionSummary {
        self.summary(&self.condition()).expect("intervened summary is always present")
    }

    pub fn to_records(&self) -> Vec<ReportRecord> {
        let mut header = self.clone();
        header.runs.clear();
        header.summaries.clear();
        let mut out = vec![ReportRecord::Header(Box::new(header))];
        out.extend(self.runs.iter().cloned().map(ReportRecord::Run));
        out.extend(self.summaries.iter().cloned().map(ReportRecord::Summary));
        out
    }

    pub fn from_records(records: Vec<ReportRecord>) -> Option<Self> {
        let mut iter = records.into_iter();
        let ReportRecord::Header(header) = iter.next()? else {
            return None;
        };
        let mut report = *header;
        for r in iter {
            match r {
                ReportRecord::Header(_) => return None,
                ReportRecord::Run(s) => report.runs.push(s),
                ReportRecord::Summary(s) => report.summaries.push(s),
            }
        }
        Some(report)
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        io::write_jsonl(path, &self.to_records())
    }
}

/// One line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Header(Box<ExperimentReport>),
    Run(SeedResult),
    Summary(ConditionSummary),
}

/// Plot data for report records: one row per condition and item group.
pub fn plot_csv(records: &[ReportRecord]) -> String {
    let seeds = records
        .iter()
        .find_map(|r| match r {
            ReportRecord::Header(h) => Some(h.seeds.len()),
            _ => None,
        })
        .unwrap_or_else(|| records.iter().filter(|r| matches!(r, ReportRecord::Run(_))).count() / 2);
    let mut out = String::from("condition,group,mean,std,delta,abs_delta,seeds\n");
    for r in records {
        if let ReportRecord::Summary(s) = r {
            for (group, mean, std, delta, abs) in [
                ("target", s.target_mean, s.target_std, s.target_delta, s.target_abs_delta),
                ("control", s.control_mean, s.control_std, s.control_delta, s.control_abs_delta),
            ] {
                out.push_str(&format!("{},{group},{mean:.6},{std:.6},{delta:.6},{abs:.6},{seeds}\n", s.condition));
            }
        }
    }
    out
}

/// Central band holding at least `level` of Binomial(n, p), as proportions.
pub fn chance_band(n: usize, p: f64, level: f64) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_pmf = Vec::with_capacity(n + 1);
    let mut log_choose = 0.0f64;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        log_pmf.push(log_choose + k as f64 * lp + (n - k) as f64 * lq);
    }
    let max = log_pmf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pmf: Vec<f64> = log_pmf.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = pmf.iter().sum();
    let tail = (1.0 - level) / 2.0;
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, None);
    for (k, w) in pmf.iter().enumerate() {
        cdf += w / total;
        if lo.is_none() && cdf >= tail {
            lo = Some(k);
        }
        if hi.is_none() && cdf >= 1.0 - tail - 1e-12 {
            hi = Some(k);
        }
    }
    [lo.unwrap_or(0) as f64 / n as f64, hi.unwrap_or(n) as f64 / n as f64]
}

/// A generated corpus together with its baseline training run.
pub struct ToyLab {
    pub config: ToyConfig,
    pub corpus: ToyCorpus,
    pub baseline: TrainRun,
}

impl ToyLab {
    pub fn prepare(config: ToyConfig) -> Result<Self, ToyError> {
        let corpus = generate_corpus(&config.corpus)?;
        let mut model = ToyModel::new(config.model, &corpus.world);
        let baseline = train(
            &mut model,
            &corpus.world,
            &corpus.batches,
            config.corpus.sequence_length,
            None,
            config.train_seed,
            &corpus.items,
        )?;
        Ok(Self {
            config,
            corpus,
            baseline,
        })
    }

    /// Writes the corpus, `items.jsonl`, the baseline `correctness.jsonl`
    /// and the config as `toy.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<crate::corpus::CorpusManifest, ToyError> {
        let manifest = self.corpus.write(dir)?;
        self.baseline.matrix.write(&dir.join("correctness.jsonl"))?;
        let text = toml::to_string(&self.config).map_err(|e| ToyError::InvalidSpec(e.to_string()))?;
        io::atomic_write(&dir.join("toy.toml"), text.as_bytes())?;
        Ok(manifest)
    }

    /// Position of the batch ending at `step`, if a batch follows it.
    fn batch_position(&self, step: Step) -> Option<usize> {
        let b = self.corpus.batches.iter().position(|b| b.batch_id() == step)?;
        (b + 1 < self.corpus.batches.len()).then_some(b)
    }

    pub fn select(&self, step: Step, mode: Mode) -> Result<TargetSelection, ToyError> {
        if self.batch_position(step).is_none() {
            return Err(ToyError::BadStep(step));
        }
        Ok(select_targets(&self.baseline.matrix, step, mode)?)
    }

    /// The configured step, or the batch end with a successor batch that has
    /// the most targets (earliest on ties).
    pub fn choose_step(&self, mode: Mode) -> Result<Step, ToyError> {
        if let Some(step) = self.config.step {
            self.select(step, mode)?;
            return Ok(step);
        }
        let mut best: Option<(usize, Step)> = None;
        for b in &self.corpus.batches[..self.corpus.batches.len().saturating_sub(1)] {
            let n = self.select(b.batch_id(), mode)?.targets.len();
            if n > 0 && best.is_none_or(|(m, _)| n > m) {
                best = Some((n, b.batch_id()));
            }
        }
        best.map(|(_, s)| s).ok_or(ToyError::NoTargets)
    }

    pub fn match_batch(&self, batch: &DataBatch, method: MatchMethod) -> Result<MatchSet, ToyError> {
        let items = &self.corpus.items;
        Ok(match method {
            MatchMethod::Cooccurrence => match_cooccurrence(batch, items, EntitySearch::default()),
            MatchMethod::Occurrence => match_occurrence(batch, items, EntitySearch::default()),
            MatchMethod::Bm25 => match_bm25(
                batch,
                items,
                &Analyzer::standard(),
                Bm25Params::default(),
                Selection::TopK(self.config.top_k),
            )?,
            MatchMethod::Dense => {
                return Err(ToyError::InvalidSpec("dense matching needs externally computed scores".into()))
            }
        })
    }

    /// Trains a copy of the checkpoint before the batch ending at `step` on
    /// `batch` and returns per-item correctness.
    pub fn retrain(
        &self,
        step: Step,
        batch: &DataBatch,
        seed: u64,
    ) -> Result<std::collections::BTreeMap<String, bool>, ToyError> {
        let b = self.batch_position(step).ok_or(ToyError::BadStep(step))?;
        let start = if b == 0 { 0 } else { self.corpus.batches[b - 1].batch_id() };
        let mut model = self.baseline.checkpoint(start)?.clone();
        train_batch(&mut model, &self.corpus.world, batch, self.config.corpus.sequence_length, seed)?;
        evaluate(&model, &self.corpus.world, &self.corpus.items)
    }

    pub fn run(&self, mode: Mode, method: MatchMethod, seeds: &[u64]) -> Result<ExperimentReport, ToyError> {
        if seeds.len() < 2 {
            return Err(ToyError::TooFewSeeds(seeds.len()));
        }
        let step = self.choose_step(mode)?;
        let b = self.batch_position(step).ok_or(ToyError::BadStep(step))?;
        let selection = self.select(step, mode)?;
        if selection.targets.is_empty() {
            return Err(ToyError::NoTargets);
        }
        let targets = &selection.targets;
        let control = &selection.control;
        let batch_t = &self.corpus.batches[b];
        let batch_next = &self.corpus.batches[b + 1];

        let matches_t = self.match_batch(batch_t, method)?;
        let matches_next = self.match_batch(batch_next, method)?;
        let mut cfg = PlanConfig::new(self.config.corpus.sequence_length, PAD);
        cfg.k = self.config.top_k;
        let plan = match mode {
            Mode::Suppress => plan_suppress(&matches_t, &matches_next, targets, batch_t, batch_next, &cfg)?,
            Mode::Promote => plan_promote(&matches_t, &matches_next, targets, batch_t, batch_next, &cfg)?,
        };
        let (batch_int, swap) = apply_plan(&plan, batch_t, batch_next)?;

        let condition = format!("{mode}-{method}");
        let per_seed: Vec<[SeedResult; 2]> = seeds
            .par_iter()
            .map(|&seed| {
                let mut out = Vec::with_capacity(2);
                for (name, batch) in [("retrained", batch_t), (condition.as_str(), &batch_int)] {
                    let correct = self.retrain(step, batch, seed)?;
                    out.push(SeedResult {
                        condition: name.to_string(),
                        seed,
                        target_accuracy: accuracy(&correct, targets)?,
                        control_accuracy: accuracy(&correct, control)?,
                    });
                }
                let [r, i]: [SeedResult; 2] = out.try_into().expect("two conditions");
                Ok([r, i])
            })
            .collect::<Result<_, ToyError>>()?;

        let retrained: Vec<&SeedResult> = per_seed.iter().map(|p| &p[0]).collect();
        let intervened: Vec<&SeedResult> = per_seed.iter().map(|p| &p[1]).collect();
        let summaries = vec![
            summarize_condition("retrained", &retrained, &retrained),
            summarize_condition(&condition, &intervened, &retrained),
        ];
        let checkpoint = evaluate(self.baseline.checkpoint(step)?, &self.corpus.world, &self.corpus.items)?;
        let choices = self.corpus.items.first().map_or(4, |i| i.choices.len());

        Ok(ExperimentReport {
            mode,
            method,
            step,
            start_step: if b == 0 { 0 } else { self.corpus.batches[b - 1].batch_id() },
            donor_batch_id: batch_next.batch_id(),
            targets: targets.iter().cloned().collect(),
            control_count: control.len(),
            seeds: seeds.to_vec(),
            checkpoint_target_accuracy: accuracy(&checkpoint, targets)?,
            checkpoint_control_accuracy: accuracy(&checkpoint, control)?,
            replacements: plan.replacements.len(),
            replacement_fraction: replacement_fraction(&plan, batch_t)?,
            exact_length_rate: swap.totals.exact_length_rate,
            token_count_preserved: batch_int.token_count() == batch_t.token_count(),
            chance_band: chance_band(targets.len() * seeds.len(), 1.0 / choices as f64, 0.95),
            runs: per_seed.into_iter().flatten().collect(),
            summaries,
            config_hash: self.config.hash(),
        })
    }

    /// Item ids that are targets of `mode` at `step`.
    pub fn targets(&self, step: Step, mode: Mode) -> Result<BTreeSet<String>, ToyError> {
        Ok(self.select(step, mode)?.targets)
    }
}

/// Generates the corpus, trains the baseline and runs one experiment.
pub fn run_experiment(
    config: &ToyConfig,
    mode: Mode,
    method: MatchMethod,
    seeds: &[u64],
) -> Result<ExperimentReport, ToyError> {
    ToyLab::prepare(config.clone())?.run(mode, method, seeds)
}
