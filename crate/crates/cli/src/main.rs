use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use intervene::corpus::{load_manifest, read_batch, write_corpus, CorpusManifest};
use intervene::evaluator::{
    accuracy, cohens_kappa, export_audit, predict, relevance_rates, AnnotationRecord, AuditPrompt, MajorityBaseline,
    Normalization, ScoreFile,
};
use intervene::io;
use intervene::item::load_items;
use intervene::matcher::{
    build_bm25, ingest_dense_scores, match_bm25, match_cooccurrence, match_occurrence, Analyzer, Bm25Params,
    EntitySearch, MatchMethod, MatchSet, Selection,
};
use intervene::pipeline::{self, ExperimentConfig, PipelineError, Severity};
use intervene::planner::{apply_plan, plan_promote, plan_suppress, Mode, PlanConfig};
use intervene::selector::{
    argmax_step, filter_by_matches, select_targets, select_with_rule, CorrectnessMatrix, SelectionRule,
    TargetSelection,
};
use intervene::toylab::{plot_csv, ReportRecord, ToyConfig, ToyLab};

#[derive(Parser)]
#[command(name = "intervene", version, about = "Match, select and rewrite pretraining data batches")]
struct Cli {
    /// Experiment or toy-lab config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (file or directory, per subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for sampling and corpus generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index over one batch.
    Index(IndexArgs),
    /// Match documents of one batch to items.
    Match(MatchArgs),
    /// Select target and control items at a checkpoint step.
    Select(SelectArgs),
    /// Plan and apply a suppress or promote intervention.
    Intervene(InterveneArgs),
    /// Accuracy of externally scored choices on target and control items.
    Evaluate(EvaluateArgs),
    /// Relevance-audit prompts and annotator agreement.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Generate a synthetic corpus with items and baseline checkpoints.
    ToyGen(ToyGenArgs),
    /// Run a retraining experiment in the toy lab.
    ToyRun(ToyRunArgs),
    /// Turn report records into plot data.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
    /// List config problems without running anything.
    Validate(RunArgs),
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Batch id within the manifest.
    #[arg(long)]
    batch: u64,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    batch: BatchArgs,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cooc,
    Occ,
    Bm25,
    Dense,
}

impl From<MethodArg> for MatchMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cooc => MatchMethod::Cooccurrence,
            MethodArg::Occ => MatchMethod::Occurrence,
            MethodArg::Bm25 => MatchMethod::Bm25,
            MethodArg::Dense => MatchMethod::Dense,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Suppress,
    Promote,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Suppress => Mode::Suppress,
            ModeArg::Promote => Mode::Promote,
        }
    }
}

#[derive(Args)]
struct MatchArgs {
    #[arg(value_enum)]
    method: MethodArg,
    /// Manifest holding the batch (not needed for dense).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    batch: Option<u64>,
    #[arg(long)]
    items: PathBuf,
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    /// Score cut for scored methods; replaces --top-k.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    word_boundary: bool,
    /// Precomputed dense scores.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    correctness: PathBuf,
    #[arg(long, value_enum, default_value = "suppress")]
    mode: ModeArg,
    /// Checkpoint step; by default the step with the most targets.
    #[arg(long)]
    step: Option<u64>,
    #[arg(long, default_value = "learned-at")]
    rule: String,
    #[arg(long, default_value_t = 0)]
    min_matches: usize,
    /// Match set used to count matched documents for --min-matches.
    #[arg(long)]
    matches: Option<PathBuf>,
}

#[derive(Args)]
struct InterveneArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    manifest: PathBuf,
    /// Match set over the intervened batch.
    #[arg(long = "match")]
    matches: PathBuf,
    /// Match set over the following batch.
    #[arg(long = "match-next")]
    matches_next: PathBuf,
    /// Target selection written by `select`.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long)]
    max_replacements: Option<usize>,
    /// Directory for the rewritten batch and its manifest.
    #[arg(long)]
    out_batch: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long, default_value = "none")]
    norm: String,
    /// Target selection JSON, or a file with one item id per line.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// One item id per line; defaults to the selection's control group.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Training items for a majority-baseline comparison.
    #[arg(long)]
    majority_train: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Write judge prompts for the top matched documents of each item.
    Export {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        #[command(flatten)]
        batch: BatchArgs,
        #[arg(long, default_value_t = 20)]
        top_n: usize,
        #[arg(long, default_value = "correct-answer")]
        prompt: String,
    },
    /// Cohen's kappa between two annotation files.
    Kappa {
        a: PathBuf,
        b: PathBuf,
    },
}

#[derive(Args)]
struct ToyGenArgs {
    /// Toy-lab config; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct ToyRunArgs {
    /// Toy-lab config; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "suppress")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "cooc")]
    method: MethodArg,
    /// Number of retraining seeds, numbered from 1.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Plot data from a report file.
    Plot {
        report: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

/// Each flag overrides the matching key of the config file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long)]
    correctness: Option<PathBuf>,
    /// Checkpoint step to intervene at.
    #[arg(long)]
    step: Option<u64>,
    #[arg(long)]
    rule: Option<String>,
    /// suppress or promote.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_matches: Option<usize>,
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    toy_config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

struct Ctx {
    out: Option<PathBuf>,
    seed: Option<u64>,
    json: bool,
}

impl Ctx {
    fn out(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("--out is required for {what}"))
    }

    fn emit(&self, value: serde_json::Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{value}");
        } else {
            let t = text();
            if !t.is_empty() {
                println!("{t}");
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        out: cli.out.clone(),
        seed: cli.seed,
        json: cli.json,
    };
    match dispatch(cli.command, cli.config, &ctx) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", render(&err));
            let code = err.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

/// Error chain without causes already quoted by their parent.
fn render(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn dispatch(command: Command, config: Option<PathBuf>, ctx: &Ctx) -> Result<u8> {
    match command {
        Command::Index(a) => index(a, ctx),
        Command::Match(a) => match_cmd(a, ctx),
        Command::Select(a) => select(a, ctx),
        Command::Intervene(a) => intervene(a, ctx),
        Command::Evaluate(a) => evaluate(a, ctx),
        Command::Audit(a) => audit(a, ctx),
        Command::ToyGen(a) => toy_gen(a.spec.or(config), ctx),
        Command::ToyRun(a) => {
            let spec = a.spec.clone().or(config);
            toy_run(a, spec, ctx)
        }
        Command::Report(ReportCommand::Plot { report, format }) => plot(&report, &format, ctx),
        Command::Run(a) => run(experiment_config(config, a, ctx)?, ctx),
        Command::Validate(a) => validate(experiment_config(config, a, ctx)?, ctx),
    }
}

fn index(a: IndexArgs, ctx: &Ctx) -> Result<u8> {
    let manifest = load_manifest(&a.batch.manifest)?;
    let batch = read_batch(&manifest, a.batch.batch)?;
    let index = build_bm25(&batch, &Analyzer::standard(), Bm25Params { k1: a.k1, b: a.b })?;
    if let Some(out) = &ctx.out {
        io::write_json(out, &index)?;
    }
    ctx.emit(
        json!({"batch": a.batch.batch, "docs": index.doc_count(), "avg_len": index.avg_len(), "terms": index.vocabulary_size()}),
        || {
            format!(
                "batch {}: {} docs, {} terms, average length {:.2}",
                a.batch.batch,
                index.doc_count(),
                index.vocabulary_size(),
                index.avg_len()
            )
        },
    );
    Ok(0)
}

fn match_cmd(a: MatchArgs, ctx: &Ctx) -> Result<u8> {
    let items = load_items(&a.items)?;
    let method = MatchMethod::from(a.method);
    let selection = match a.threshold {
        Some(t) => Selection::Threshold(t),
        None => Selection::TopK(a.top_k),
    };
    let search = EntitySearch {
        word_boundary: a.word_boundary,
        window: None,
    };
    let set = if method == MatchMethod::Dense {
        let scores = a.scores.as_deref().context("dense matching needs --scores")?;
        ingest_dense_scores(scores, &items, selection)?
    } else {
        let manifest = load_manifest(a.manifest.as_deref().context("--manifest is required")?)?;
        let batch = read_batch(&manifest, a.batch.context("--batch is required")?)?;
        match method {
            MatchMethod::Cooccurrence => match_cooccurrence(&batch, &items, search),
            MatchMethod::Occurrence => match_occurrence(&batch, &items, search),
            _ => match_bm25(&batch, &items, &Analyzer::standard(), Bm25Params::default(), selection)?,
        }
    };
    set.write(ctx.out("match")?, None)?;
    let matched: usize = set.item_ids().filter(|id| set.match_count(id) > 0).count();
    let pairs: usize = set.item_ids().map(|id| set.match_count(id)).sum();
    ctx.emit(
        json!({"method": method, "items": items.len(), "items_matched": matched, "pairs": pairs, "skipped": set.skipped()}),
        || format!("{method}: {matched} of {} items matched, {pairs} (item, doc) pairs", items.len()),
    );
    Ok(0)
}

fn select(a: SelectArgs, ctx: &Ctx) -> Result<u8> {
    let matrix = CorrectnessMatrix::load(&a.correctness)?;
    let rule: SelectionRule = a.rule.parse()?;
    let mode = Mode::from(a.mode);
    let step = match a.step {
        Some(s) => s,
        None => argmax_step(&matrix, rule)?,
    };
    let mut sel = match rule {
        SelectionRule::LearnedAt => select_targets(&matrix, step, mode)?,
        other => {
            let mut s = select_with_rule(&matrix, step, other)?;
            s.mode = Some(mode);
            s
        }
    };
    if a.min_matches > 0 {
        let path = a.matches.as_deref().context("--min-matches needs --matches")?;
        sel = filter_by_matches(&sel, &MatchSet::read(path)?, a.min_matches);
    }
    sel.write(ctx.out("select")?)?;
    ctx.emit(
        json!({"step": sel.step, "rule": sel.rule, "targets": sel.targets.len(), "control": sel.control.len()}),
        || format!("step {}: {} targets, {} control ({})", sel.step, sel.targets.len(), sel.control.len(), sel.rule),
    );
    Ok(0)
}

fn intervene(a: InterveneArgs, ctx: &Ctx) -> Result<u8> {
    let manifest = load_manifest(&a.manifest)?;
    let selection = TargetSelection::read(&a.targets)?;
    let matches_t = MatchSet::read(&a.matches)?;
    let matches_next = MatchSet::read(&a.matches_next)?;
    let step = selection.step;
    let next = manifest
        .successor(step)
        .with_context(|| format!("no batch after {step} in the manifest"))?;
    let batch_t = read_batch(&manifest, step)?;
    let batch_next = read_batch(&manifest, next)?;
    let mut cfg = PlanConfig::new(manifest.sequence_length, manifest.pad_token);
    cfg.k = a.k;
    cfg.max_replacements = a.max_replacements;
    let mode = Mode::from(a.mode);
    let plan = match mode {
        Mode::Suppress => plan_suppress(&matches_t, &matches_next, &selection.targets, &batch_t, &batch_next, &cfg)?,
        Mode::Promote => plan_promote(&matches_t, &matches_next, &selection.targets, &batch_t, &batch_next, &cfg)?,
    };
    let (batch, report) = apply_plan(&plan, &batch_t, &batch_next)?;
    if let Some(p) = &a.plan {
        plan.write(p, None)?;
    }
    write_corpus(
        &CorpusManifest {
            batches: Vec::new(),
            ..manifest.clone()
        },
        std::slice::from_ref(&batch),
        &a.out_batch,
    )?;
    io::write_json(&a.report, &report)?;
    let t = &report.totals;
    ctx.emit(
        json!({"mode": mode, "batch": step, "donor_batch": next, "totals": t}),
        || {
            format!(
                "{mode} batch {step}: {} replacements, {:.1}% exact length, {} tokens truncated, {} pad tokens",
                t.replacements,
                100.0 * t.exact_length_rate,
                t.tokens_truncated,
                t.pad_tokens
            )
        },
    );
    Ok(0)
}

fn read_ids(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn evaluate(a: EvaluateArgs, ctx: &Ctx) -> Result<u8> {
    let items = load_items(&a.items)?;
    let norm: Normalization = a.norm.parse()?;
    let scores = ScoreFile::load(&a.scores)?;
    let correct = predict(&scores, &items, norm)?;
    let all: BTreeSet<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let (targets, mut controls) = match &a.targets {
        Some(p) => match TargetSelection::read(p) {
            Ok(sel) => (sel.targets, Some(sel.control)),
            Err(_) => (read_ids(p)?, None),
        },
        None => (all.clone(), None),
    };
    if let Some(p) = &a.controls {
        controls = Some(read_ids(p)?);
    }
    let target_acc = accuracy(&correct, &targets)?;
    let control_acc = match &controls {
        Some(c) if !c.is_empty() => Some(accuracy(&correct, c)?),
        _ => None,
    };
    let majority = match &a.majority_train {
        Some(p) => {
            let mb = MajorityBaseline::fit(&load_items(p)?)?;
            Some(accuracy(&mb.predictions(&items)?, &targets)?)
        }
        None => None,
    };
    let value = json!({
        "norm": norm.to_string(),
        "targets": targets.len(),
        "target_accuracy": target_acc,
        "control_accuracy": control_acc,
        "majority_baseline_accuracy": majority,
    });
    if let Some(out) = &ctx.out {
        io::write_json(out, &value)?;
    }
    ctx.emit(value, || {
        let mut s = format!("target accuracy {target_acc:.4} over {} items ({norm})", targets.len());
        if let Some(c) = control_acc {
            s.push_str(&format!("\ncontrol accuracy {c:.4}"));
        }
        if let Some(m) = majority {
            s.push_str(&format!("\nmajority baseline {m:.4}"));
        }
        s
    });
    Ok(0)
}

fn audit(cmd: AuditCommand, ctx: &Ctx) -> Result<u8> {
    match cmd {
        AuditCommand::Export {
            items,
            matches,
            batch,
            top_n,
            prompt,
        } => {
            let prompt = AuditPrompt::parse(&prompt).with_context(|| {
                format!("unknown prompt {prompt:?}; expected correct-answer, educated-guess or related-topic")
            })?;
            let items = load_items(&items)?;
            let set = MatchSet::read(&matches)?;
            let manifest = load_manifest(&batch.manifest)?;
            let data = read_batch(&manifest, batch.batch)?;
            let export = export_audit(&items, &set, &data, top_n, prompt, ctx.seed.unwrap_or(0))?;
            for w in export.warnings.iter().take(5) {
                eprintln!("warning: {w}");
            }
            if export.warnings.len() > 5 {
                eprintln!("warning: {} more items with too few matched documents", export.warnings.len() - 5);
            }
            io::write_jsonl(ctx.out("audit export")?, &export.records)?;
            ctx.emit(
                json!({"records": export.records.len(), "warnings": export.warnings.len(), "prompt": prompt}),
                || format!("{} prompts ({prompt})", export.records.len()),
            );
        }
        AuditCommand::Kappa { a, b } => {
            let ra: Vec<AnnotationRecord> = io::read_jsonl(&a)?;
            let rb: Vec<AnnotationRecord> = io::read_jsonl(&b)?;
            let kappa = cohens_kappa(&ra, &rb)?;
            let rates_a = relevance_rates(&ra);
            let rates_b = relevance_rates(&rb);
            let rates = |r: &std::collections::BTreeMap<AuditPrompt, f64>| {
                r.iter().map(|(p, v)| (p.name().to_string(), json!(v))).collect::<serde_json::Map<_, _>>()
            };
            ctx.emit(
                json!({"kappa": kappa, "n": ra.len(), "relevance_a": rates(&rates_a), "relevance_b": rates(&rates_b)}),
                || {
                    let mut s = format!("kappa {kappa:.4} over {} labels", ra.len());
                    for (p, v) in &rates_a {
                        s.push_str(&format!("\n{p}: {:.3} / {:.3} yes", v, rates_b.get(p).copied().unwrap_or(f64::NAN)));
                    }
                    s
                },
            );
        }
    }
    Ok(0)
}

fn toy_config(spec: Option<PathBuf>, ctx: &Ctx) -> Result<ToyConfig> {
    let mut cfg = match spec {
        Some(p) => pipeline::load_toy_config(&p)?,
        None => ToyConfig::default(),
    };
    if let Some(seed) = ctx.seed {
        cfg.corpus.seed = seed;
    }
    Ok(cfg)
}

fn toy_gen(spec: Option<PathBuf>, ctx: &Ctx) -> Result<u8> {
    let cfg = toy_config(spec, ctx)?;
    let out = ctx.out("toy-gen")?;
    let lab = ToyLab::prepare(cfg)?;
    let manifest = lab.write(out)?;
    ctx.emit(
        json!({"batches": manifest.batch_ids(), "items": lab.corpus.items.len(), "spec_hash": manifest.config_hash}),
        || {
            format!(
                "{} batches, {} items, checkpoints {:?}",
                manifest.batches.len(),
                lab.corpus.items.len(),
                lab.baseline.matrix.steps()
            )
        },
    );
    Ok(0)
}

fn toy_run(a: ToyRunArgs, spec: Option<PathBuf>, ctx: &Ctx) -> Result<u8> {
    let cfg = toy_config(spec, ctx)?;
    let seeds: Vec<u64> = (1..=a.seeds).collect();
    let lab = ToyLab::prepare(cfg)?;
    let report = lab.run(Mode::from(a.mode), MatchMethod::from(a.method), &seeds)?;
    if let Some(out) = &ctx.out {
        report.write(out)?;
    }
    let (re, iv) = (report.retrained(), report.intervened());
    ctx.emit(serde_json::to_value(&report)?, || {
        format!(
            "{} at step {} ({} targets, {} control, {} replacements = {:.2}% of docs)\n\
             retrained        target {:.3} ± {:.3}  control {:.3} ± {:.3}\n\
             {:<16} target {:.3} ± {:.3}  control {:.3} ± {:.3}\n\
             target Δacc {:+.3}, control Δacc {:+.3}; chance band [{:.3}, {:.3}]",
            report.condition(),
            report.step,
            report.targets.len(),
            report.control_count,
            report.replacements,
            100.0 * report.replacement_fraction,
            re.target_mean,
            re.target_std,
            re.control_mean,
            re.control_std,
            iv.condition,
            iv.target_mean,
            iv.target_std,
            iv.control_mean,
            iv.control_std,
            iv.target_delta,
            iv.control_delta,
            report.chance_band[0],
            report.chance_band[1],
        )
    });
    Ok(0)
}

fn plot(report: &Path, format: &str, ctx: &Ctx) -> Result<u8> {
    if format != "csv" {
        bail!("unsupported plot format {format:?}; only csv is available");
    }
    let records: Vec<ReportRecord> = io::read_jsonl(report)?;
    let csv = plot_csv(&records);
    match &ctx.out {
        Some(out) => io::atomic_write(out, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(0)
}

/// File values, then command-line overrides.
fn experiment_config(path: Option<PathBuf>, a: RunArgs, ctx: &Ctx) -> Result<ExperimentConfig> {
    let mut cfg = match &path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.manifest {
        cfg.manifest = v;
    }
    if let Some(v) = a.items {
        cfg.items = v;
    }
    if let Some(v) = a.correctness {
        cfg.correctness = Some(v);
    }
    if let Some(v) = a.step {
        cfg.select.step = Some(v);
    }
    if let Some(v) = a.rule {
        cfg.select.rule = v;
    }
    if let Some(v) = a.min_matches {
        cfg.select.min_matches = v;
    }
    if let Some(v) = a.mode {
        cfg.intervene.mode = v;
    }
    if let Some(v) = a.method {
        cfg.matching.method = v;
    }
    if let Some(v) = a.top_k {
        cfg.matching.top_k = v;
    }
    if let Some(v) = a.threshold {
        cfg.matching.threshold = Some(v);
    }
    if let Some(v) = a.k {
        cfg.intervene.k = v;
    }
    if let Some(v) = a.norm {
        cfg.evaluate.norm = v;
    }
    if let Some(v) = a.scorer {
        cfg.evaluate.scorer = v;
    }
    if let Some(v) = a.toy_config {
        cfg.evaluate.toy_config = Some(v);
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = &ctx.out {
        cfg.out = v.clone();
    }
    Ok(cfg)
}

fn run(cfg: ExperimentConfig, ctx: &Ctx) -> Result<u8> {
    let output = pipeline::run_pipeline(&cfg)?;
    ctx.emit(serde_json::to_value(&output)?, || {
        let mut s = format!("config {}", output.config_hash);
        for p in output.artifacts() {
            s.push_str(&format!("\n  {}", p.display()));
        }
        s
    });
    Ok(0)
}

fn validate(cfg: ExperimentConfig, ctx: &Ctx) -> Result<u8> {
    let findings = pipeline::validate(&cfg);
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    ctx.emit(json!({"findings": findings, "errors": errors, "config_hash": cfg.hash()}), || {
        if findings.is_empty() {
            "config is valid".to_string()
        } else {
            findings.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
        }
    });
    Ok(if errors > 0 { 2 } else { 0 })
}
