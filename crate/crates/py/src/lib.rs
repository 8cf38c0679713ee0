use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use intervene_core::corpus::{load_manifest, read_batch};
use intervene_core::evaluator::{cohens_kappa, AnnotationRecord};
use intervene_core::item::load_items;
use intervene_core::matcher::{match_cooccurrence, match_occurrence, EntitySearch, MatchMethod};
use intervene_core::pipeline::{self, ExperimentConfig, PipelineError, Severity};
use intervene_core::planner::Mode;
use intervene_core::toylab::{ToyConfig, ToyLab};

create_exception!(intervene, StageError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    StageError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Config(_) | PipelineError::Invalid(_) => PyValueError::new_err(e.to_string()),
        other => err(other),
    }
}

fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn load_config(path: PathBuf, out: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&path).map_err(pipeline_err)?;
    if let Some(out) = out {
        cfg.out = out;
    }
    Ok(cfg)
}

/// Problems in an experiment config as `(severity, field, message)` tuples.
#[pyfunction]
fn validate(path: PathBuf) -> PyResult<Vec<(String, String, String)>> {
    let cfg = load_config(path, None)?;
    Ok(pipeline::validate(&cfg)
        .into_iter()
        .map(|f| {
            let sev = if f.severity == Severity::Error { "error" } else { "warning" };
            (sev.to_string(), f.field, f.message)
        })
        .collect())
}

/// Runs the configured experiment and returns the written artifact paths.
#[pyfunction]
#[pyo3(signature = (path, out=None))]
fn run(py: Python<'_>, path: PathBuf, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let cfg = load_config(path, out)?;
    let output = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(pipeline_err)?;
    to_py(py, &output)
}

/// Toy-lab retraining report for one intervention condition.
#[pyfunction]
#[pyo3(signature = (mode="suppress", method="cooccurrence", seeds=vec![1, 2, 3, 4, 5], spec=None))]
fn toy_run(
    py: Python<'_>,
    mode: &str,
    method: &str,
    seeds: Vec<u64>,
    spec: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let mode: Mode = mode.parse().map_err(|e| PyValueError::new_err(format!("{e}")))?;
    let method: MatchMethod = method.parse().map_err(|e| PyValueError::new_err(format!("{e}")))?;
    let cfg = match spec {
        Some(p) => pipeline::load_toy_config(&p).map_err(pipeline_err)?,
        None => ToyConfig::default(),
    };
    let report = py
        .detach(|| ToyLab::prepare(cfg).and_then(|lab| lab.run(mode, method, &seeds)))
        .map_err(err)?;
    to_py(py, &report)
}

/// Generates the toy corpus with items, baseline correctness and its
/// config into `out`; returns the manifest.
#[pyfunction]
#[pyo3(signature = (out, spec=None))]
fn toy_gen(py: Python<'_>, out: PathBuf, spec: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let cfg = match spec {
        Some(p) => pipeline::load_toy_config(&p).map_err(pipeline_err)?,
        None => ToyConfig::default(),
    };
    let manifest = py
        .detach(|| ToyLab::prepare(cfg).and_then(|lab| lab.write(&out)))
        .map_err(err)?;
    to_py(py, &manifest)
}

/// Matched doc ids per item for a boolean method over one batch.
#[pyfunction]
#[pyo3(signature = (method, manifest, batch, items, word_boundary=false))]
fn match_batch(
    py: Python<'_>,
    method: &str,
    manifest: PathBuf,
    batch: u64,
    items: PathBuf,
    word_boundary: bool,
) -> PyResult<Py<PyAny>> {
    let manifest = load_manifest(&manifest).map_err(err)?;
    let data = read_batch(&manifest, batch).map_err(err)?;
    let items = load_items(&items).map_err(err)?;
    let opts = EntitySearch {
        word_boundary,
        window: None,
    };
    let set = match method.parse::<MatchMethod>().map_err(|e| PyValueError::new_err(format!("{e}")))? {
        MatchMethod::Cooccurrence => match_cooccurrence(&data, &items, opts),
        MatchMethod::Occurrence => match_occurrence(&data, &items, opts),
        other => return Err(PyValueError::new_err(format!("{other} needs the command-line tool"))),
    };
    let docs: std::collections::BTreeMap<&str, Vec<&str>> = set
        .entries()
        .iter()
        .map(|(id, d)| (id.as_str(), d.iter().map(|s| s.doc_id.as_str()).collect()))
        .collect();
    to_py(py, &docs)
}

/// Cohen's kappa between two annotation JSONL files.
#[pyfunction]
fn kappa(a: PathBuf, b: PathBuf) -> PyResult<f64> {
    let ra: Vec<AnnotationRecord> = intervene_core::io::read_jsonl(&a).map_err(err)?;
    let rb: Vec<AnnotationRecord> = intervene_core::io::read_jsonl(&b).map_err(err)?;
    cohens_kappa(&ra, &rb).map_err(err)
}

#[pymodule]
fn intervene(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StageError", m.py().get_type::<StageError>())?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(toy_gen, m)?)?;
    m.add_function(wrap_pyfunction!(toy_run, m)?)?;
    m.add_function(wrap_pyfunction!(match_batch, m)?)?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    Ok(())
}
