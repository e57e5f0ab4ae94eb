#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mobagent_core::experiment::{ExperimentConfig, Pipeline};
use mobagent_core::http::stub::FailOnCallTransport;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn overrides(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

pub fn toy_config(city: &str, pairs: &[(&str, &str)]) -> ExperimentConfig {
    ExperimentConfig::load(&toy_dir().join(format!("{city}.toml")), &overrides(pairs)).expect("toy config loads")
}

/// A pipeline that panics on any network access.
pub fn hermetic(cfg: ExperimentConfig, dir: &Path) -> Pipeline {
    Pipeline::open(cfg, dir).expect("config validates").with_transport(Arc::new(FailOnCallTransport))
}
