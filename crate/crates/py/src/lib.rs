//! Python bindings: metrics, the objective, response parsing, and whole-pipeline
//! entry points. Everything crosses the boundary as plain Python values.

use std::collections::BTreeMap;
use std::path::Path;

use mobagent_core::experiment::{ExperimentConfig, Pipeline};
use mobagent_core::featagent::composite_objective;
use mobagent_core::predictor::{parse_prediction, ParseStatus, PredictionRecord};
use mobagent_core::transfer::export_artifact;
use mobagent_core::{eval, rundir, toy};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: mobagent_core::Error) -> PyErr {
    match e {
        mobagent_core::Error::Config(_) | mobagent_core::Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn status_name(s: ParseStatus) -> &'static str {
    match s {
        ParseStatus::Ok => "ok",
        ParseStatus::Fallback => "fallback",
        ParseStatus::Failed => "failed",
    }
}

/// `lam * acc1 + (1 - lam) * acc5`, exact for decimal inputs.
#[pyfunction]
fn objective(lam: f64, acc1: f64, acc5: f64) -> PyResult<f64> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(PyValueError::new_err("lam must lie in [0, 1]"));
    }
    Ok(composite_objective(lam, acc1, acc5))
}

/// Acc@1, Acc@5 and NDCG@5 of ranked lists against one truth each.
#[pyfunction]
fn score(ranked: Vec<Vec<String>>, truths: Vec<String>) -> PyResult<BTreeMap<String, f64>> {
    if ranked.len() != truths.len() {
        return Err(PyValueError::new_err("ranked and truths differ in length"));
    }
    let records: Vec<PredictionRecord> = ranked
        .into_iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (ranked, truth))| PredictionRecord {
            sample_id: i.to_string(),
            user_id: String::new(),
            ranked,
            truth,
            status: ParseStatus::Ok,
            reason: String::new(),
        })
        .collect();
    let m = eval::MetricsReport::compute(&records).map_err(to_py)?;
    Ok(BTreeMap::from([
        ("acc1".to_string(), m.acc1),
        ("acc5".to_string(), m.acc5),
        ("ndcg5".to_string(), m.ndcg5),
    ]))
}

/// Parses a raw model reply into `(ranked_ids, status)`.
#[pyfunction]
fn parse_reply(raw: &str) -> (Vec<String>, &'static str) {
    let p = parse_prediction("py", raw);
    (p.ranked, status_name(p.parse_status))
}

/// Runs every stage for `config` in `run_dir`; returns the metrics file text.
#[pyfunction]
#[pyo3(signature = (config, run_dir, overrides=None))]
fn run_pipeline(py: Python<'_>, config: &str, run_dir: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<String> {
    let overrides: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
    py.detach(|| {
        let cfg = ExperimentConfig::load(Path::new(config), &overrides)?;
        let p = Pipeline::open(cfg, run_dir)?;
        p.run()?;
        std::fs::read_to_string(p.dir.path(rundir::METRICS)).map_err(|e| mobagent_core::Error::io(p.dir.path(rundir::METRICS), e))
    })
    .map_err(to_py)
}

/// Writes the transfer artifact of a finished run and returns its text.
#[pyfunction]
fn export(run_dir: &str) -> PyResult<String> {
    export_artifact(&rundir::RunDir::new(run_dir)).and_then(|a| a.to_text()).map_err(to_py)
}

/// Regenerates the synthetic toy bundle in `out`.
#[pyfunction]
fn write_toy_data(out: &str) -> PyResult<()> {
    toy::write_toy_data(Path::new(out)).map_err(to_py)
}

#[pymodule]
fn mobagent(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(parse_reply, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(export, m)?)?;
    m.add_function(wrap_pyfunction!(write_toy_data, m)?)?;
    Ok(())
}
