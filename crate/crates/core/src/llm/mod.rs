//! Chat-completion backends.
//!
//! Every agent talks to a [`ChatBackend`]. Three interchangeable backends exist:
//! a live HTTP client for any OpenAI-compatible endpoint, a scripted regex mock and
//! a replay backend fed by recorded fixtures. Wrappers add recording, transcripts
//! and call counting on top of any backend.

mod json;
mod live;
mod mock;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical;

pub use json::{extract_json_payload, ExtractStrategy, Extracted};
pub use live::{LiveBackend, LiveConfig, ENV_API_BASE, ENV_API_KEY};
pub use mock::{MockBackend, MockRule};
pub use replay::{load_fixture, save_fixture, FixtureRecord, RecordingBackend, ReplayBackend};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("backend error (status {status:?}) after {retries} retries: {message}")]
    Backend {
        status: Option<u16>,
        retries: u32,
        message: String,
    },
    #[error("fixture miss for request {0}")]
    FixtureMiss(String),
    #[error("no mock rule matches the request")]
    NoRule,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("could not parse a JSON payload from response: {raw:?}")]
    Parse { raw: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

pub const DEFAULT_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 1024,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| LlmError::InvalidRequest("request has no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(LlmError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message contents joined by newlines; what mock rules match against.
    pub fn joined_content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Canonical serialization with whitespace runs collapsed; the replay key is its SHA-256.
    pub fn canonical_form(&self) -> String {
        let normalized = ChatRequest {
            messages: self
                .messages
                .iter()
                .map(|m| ChatMessage {
                    role: m.role,
                    content: normalize_whitespace(&m.content),
                })
                .collect(),
            ..self.clone()
        };
        canonical::to_canonical_line(&normalized).expect("chat requests always serialize")
    }

    pub fn stable_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_form().as_bytes()))
    }

    pub fn prompt_token_estimate(&self) -> u32 {
        self.messages
            .iter()
            .map(|m| m.content.split_whitespace().count() as u32)
            .sum()
    }
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Live,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub latency_ms: u64,
    pub source: ResponseSource,
    #[serde(default)]
    pub retry_count: u32,
}

/// A chat-completion backend. Implementations are shareable across threads.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Counts calls and keeps every request that passed through.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Number of requests whose system prompt contains `marker`.
    pub fn calls_with_marker(&self, marker: &str) -> usize {
        self.requests()
            .iter()
            .filter(|r| {
                r.messages
                    .iter()
                    .any(|m| m.role == Role::System && m.content.contains(marker))
            })
            .count()
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(request.clone());
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Keeps a transcript of every exchange for the run directory.
///
/// Requests never carry credentials, so transcripts need no redaction beyond what
/// the live backend already does in its error messages.
pub struct TranscriptBackend<B> {
    inner: B,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<B: ChatBackend> TranscriptBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    /// Entries sorted by request hash so the file is independent of thread scheduling.
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        let mut e = self.entries.lock().unwrap_or_else(|p| p.into_inner()).clone();
        e.sort_by(|a, b| {
            a.request_hash
                .cmp(&b.request_hash)
                .then_with(|| a.response.cmp(&b.response))
        });
        e.dedup();
        e
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for TranscriptBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let result = self.inner.complete(request);
        let entry = TranscriptEntry {
            request_hash: request.stable_hash(),
            model_id: request.model_id.clone(),
            messages: request.messages.clone(),
            response: result.as_ref().ok().map(|r| r.text.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(entry);
        result
    }
}
