use std::path::{Path, PathBuf};

use intervene::pipeline::{artifact_hashes, run_pipeline, validate, ExperimentConfig, PipelineError, Severity};
use intervene::toylab::{ToyConfig, ToyLab};

fn toy_dir() -> tempfile::TempDir {
    let mut cfg = ToyConfig::default();
    cfg.corpus.facts_per_relation = 12;
    cfg.corpus.batches = 4;
    let dir = tempfile::tempdir().unwrap();
    ToyLab::prepare(cfg).unwrap().write(dir.path()).unwrap();
    dir
}

fn config(dir: &Path, out: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        manifest: dir.join("manifest.toml"),
        items: dir.join("items.jsonl"),
        correctness: Some(dir.join("correctness.jsonl")),
        out: dir.join(out),
        seeds: vec![1, 2],
        ..ExperimentConfig::default()
    };
    cfg.evaluate.scorer = "toy".into();
    cfg.evaluate.toy_config = Some(dir.join("toy.toml"));
    cfg
}

fn errors(cfg: &ExperimentConfig) -> Vec<String> {
    validate(cfg)
        .into_iter()
        .filter(|f| f.severity == Severity::Error)
        .map(|f| f.field)
        .collect()
}

#[test]
fn valid_config_has_no_errors() {
    let dir = toy_dir();
    assert!(errors(&config(dir.path(), "out")).is_empty());
}

#[test]
fn missing_manifest_is_the_only_error() {
    let dir = toy_dir();
    let mut cfg = config(dir.path(), "out");
    cfg.manifest = PathBuf::from("/nonexistent/manifest.toml");
    assert_eq!(errors(&cfg), vec!["manifest".to_string()]);
}

#[test]
fn last_batch_cannot_be_intervened() {
    let dir = toy_dir();
    let mut cfg = config(dir.path(), "out");
    let manifest = intervene::corpus::load_manifest(&cfg.manifest).unwrap();
    cfg.select.step = manifest.batch_ids().last().copied();
    for mode in ["promote", "suppress"] {
        cfg.intervene.mode = mode.into();
        assert!(errors(&cfg).contains(&"select.step".to_string()), "{mode}");
    }
}

#[test]
fn bad_strings_are_each_reported() {
    let dir = toy_dir();
    let mut cfg = config(dir.path(), "out");
    cfg.matching.method = "telepathy".into();
    cfg.intervene.mode = "amplify".into();
    cfg.select.rule = "sometimes".into();
    let errs = errors(&cfg);
    for field in ["match.method", "intervene.mode", "select.rule"] {
        assert!(errs.contains(&field.to_string()), "{field}");
    }
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Invalid(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(!cfg.out.exists());
}

#[test]
fn unknown_keys_are_config_errors() {
    let err = ExperimentConfig::from_toml("manifest = \"m\"\n[match]\nmethd = \"bm25\"\n").unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
}

#[test]
fn relative_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub").join("exp.toml");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, "manifest = \"data/manifest.toml\"\nout = \"/abs/out\"\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.manifest, dir.path().join("sub/data/manifest.toml"));
    assert_eq!(cfg.out, PathBuf::from("/abs/out"));
}

#[test]
fn hash_ignores_the_output_location() {
    let dir = toy_dir();
    let a = config(dir.path(), "a");
    let b = config(dir.path(), "b");
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.seeds = vec![1, 3];
    assert_ne!(a.hash(), c.hash());
    assert_eq!(ExperimentConfig::from_toml(&a.to_toml()).unwrap(), a);
}

#[test]
fn reruns_produce_identical_artifacts() {
    let dir = toy_dir();
    let a = config(dir.path(), "a");
    let b = config(dir.path(), "b");
    let out_a = run_pipeline(&a).unwrap();
    let out_b = run_pipeline(&b).unwrap();
    assert_eq!(out_a.config_hash, out_b.config_hash);
    let ha = artifact_hashes(&out_a, &a.out).unwrap();
    let hb = artifact_hashes(&out_b, &b.out).unwrap();
    assert!(ha.len() >= 7);
    assert_eq!(ha, hb);
}

#[test]
fn stage_failures_carry_their_exit_code() {
    let dir = toy_dir();
    let mut cfg = config(dir.path(), "out");
    let scores = dir.path().join("dense.jsonl");
    std::fs::write(&scores, "{\"item_id\":\"nobody\",\"doc_id\":\"d\",\"score\":0.5}\n").unwrap();
    cfg.matching.method = "dense".into();
    cfg.matching.dense_scores = Some(scores.clone());
    cfg.matching.dense_scores_next = Some(scores);
    assert!(errors(&cfg).is_empty());
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 11, "{err}");
    assert!(err.to_string().contains("match stage failed"));
}
