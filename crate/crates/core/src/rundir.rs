//! Run-directory layout. Every stage reads its predecessors' files from here and
//! writes its own, so any later stage can be re-run from the directory alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{Error, Result};
use crate::featagent::FsVariant;
use crate::profiler::GroupingStage;

pub const CONFIG: &str = "config.toml";
pub const RUN_META: &str = "run.json";
pub const INGEST_REPORT: &str = "ingest.json";
pub const CORPUS: &str = "corpus.json";
pub const SAMPLES: &str = "samples.json";
pub const SOCIAL: &str = "social.json";
/// Standard registry written by the features stage.
pub const BASE_REGISTRY: &str = "registry_base.json";
/// Registry after optimization, including generated features.
pub const REGISTRY: &str = "registry.json";
pub const FEATURES: &str = "features.jsonl";
pub const PERSONAS: &str = "personas.json";
pub const GROUPS: &str = "groups.json";
pub const OPTIMIZATION: &str = "optimization.json";
pub const GROUP_OPTIMIZATION: &str = "group_optimization.json";
pub const WEIGHTS: &str = "weights.json";
pub const PLAN: &str = "plan.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const METRICS: &str = "metrics.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_TSV: &str = "report.tsv";
pub const TRANSCRIPTS: &str = "transcripts.jsonl";
pub const FIXTURES: &str = "fixtures.jsonl";
pub const GEO_CACHE: &str = "geo_cache.jsonl";
pub const ARTIFACT: &str = "artifact.json";
pub const TRANSFER: &str = "transfer.json";
pub const USER_TRANSFER: &str = "user_transfer.json";
/// Copy of the artifact a transfer run consumed.
pub const SOURCE_ARTIFACT: &str = "source_artifact.json";

/// Settings that identify how a run's artifacts were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub city: String,
    pub model_id: String,
    pub seed: u64,
    pub lambda: f64,
    pub iterations: usize,
    pub variant: FsVariant,
    pub grouping_stage: GroupingStage,
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let dir = Self::new(root);
        fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    fn require(&self, name: &str, what: &str, stage: &'static str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingStage {
                stage,
                what: what.to_string(),
                file: name.to_string(),
            })
        }
    }

    /// Reads `name`, or fails naming the stage that produces it.
    pub fn read<T: DeserializeOwned>(&self, name: &str, what: &str, stage: &'static str) -> Result<T> {
        canonical::read_file(&self.require(name, what, stage)?)
    }

    pub fn read_lines<T: DeserializeOwned>(&self, name: &str, what: &str, stage: &'static str) -> Result<Vec<T>> {
        canonical::read_lines(&self.require(name, what, stage)?)
    }

    pub fn write<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        canonical::write_pretty(&self.path(name), value)
    }

    pub fn write_lines<T: Serialize>(&self, name: &str, records: &[T]) -> Result<()> {
        canonical::write_lines(&self.path(name), records)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        canonical::write_atomic(&self.path(name), text)
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        let p = self.path(name);
        match fs::remove_file(&p) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(p, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_names_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::new(tmp.path());
        let err = dir.read::<serde_json::Value>(PREDICTIONS, "predictions", "predict").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("predictions missing"), "{msg}");
        assert!(msg.contains("`predict`"), "{msg}");
    }

    #[test]
    fn write_then_read() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run")).unwrap();
        dir.write(METRICS, &serde_json::json!({"b": 1, "a": 0.25})).unwrap();
        let v: serde_json::Value = dir.read(METRICS, "metrics", "eval").unwrap();
        assert_eq!(v["a"], 0.25);
        assert_eq!(fs::read_to_string(dir.path(METRICS)).unwrap(), "{\n  \"a\": 0.250000,\n  \"b\": 1\n}\n");
    }
}
