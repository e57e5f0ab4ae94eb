use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, ResponseSource};
use crate::canonical;
use crate::error::Result;

/// One line of a replay fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub hash: String,
    pub response: String,
}

pub fn load_fixture(path: &Path) -> Result<BTreeMap<String, String>> {
    let records: Vec<FixtureRecord> = canonical::read_lines(path)?;
    Ok(records.into_iter().map(|r| (r.hash, r.response)).collect())
}

pub fn save_fixture(path: &Path, records: &BTreeMap<String, String>) -> Result<()> {
    let lines: Vec<FixtureRecord> = records
        .iter()
        .map(|(hash, response)| FixtureRecord {
            hash: hash.clone(),
            response: response.clone(),
        })
        .collect();
    canonical::write_lines(path, &lines)
}

/// Answers strictly from recorded fixtures. A miss is an error, never a live call.
pub struct ReplayBackend {
    records: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn new(records: BTreeMap<String, String>) -> Self {
        Self { records }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::new(load_fixture(path)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, LlmError> {
        request.validate()?;
        let hash = request.stable_hash();
        let text = self
            .records
            .get(&hash)
            .ok_or(LlmError::FixtureMiss(hash))?
            .clone();
        Ok(ChatResponse {
            completion_tokens: text.split_whitespace().count() as u32,
            prompt_tokens: request.prompt_token_estimate(),
            text,
            latency_ms: 0,
            source: ResponseSource::Replay,
            retry_count: 0,
        })
    }
}

/// Passes requests through and records every successful response for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    records: Mutex<BTreeMap<String, String>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn records(&self) -> BTreeMap<String, String> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_fixture(path, &self.records())
    }

    pub fn into_replay(self) -> ReplayBackend {
        ReplayBackend::new(self.records.into_inner().unwrap_or_else(|p| p.into_inner()))
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, LlmError> {
        let resp = self.inner.complete(request)?;
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(request.stable_hash(), resp.text.clone());
        Ok(resp)
    }
}
