use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, ResponseSource};
use crate::error::{Error, Result};

/// One line of a mock script.
///
/// `pattern` is a regex searched in the concatenated message content. The first
/// matching rule answers with `response`. When `expand` is set, `$1`/`${name}`
/// references are replaced with the pattern's capture groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub response: String,
    #[serde(default)]
    pub expand: bool,
}

impl MockRule {
    pub fn new(pattern: &str, response: &str) -> Self {
        Self {
            pattern: pattern.into(),
            response: response.into(),
            expand: false,
        }
    }

    pub fn expanding(pattern: &str, response: &str) -> Self {
        Self {
            expand: true,
            ..Self::new(pattern, response)
        }
    }
}

/// Deterministic scripted backend. Never touches the network.
pub struct MockBackend {
    rules: Vec<(Regex, MockRule)>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self> {
        let compiled = rules
            .into_iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.clone()))
                    .map_err(|e| Error::invalid(format!("bad mock pattern `{}`: {e}", r.pattern)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { rules: compiled })
    }

    /// Loads a JSON array of rules.
    pub fn from_file(path: &Path) -> Result<Self> {
        let rules: Vec<MockRule> = crate::canonical::read_file(path)?;
        Self::new(rules)
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, LlmError> {
        request.validate()?;
        let content = request.joined_content();
        for (re, rule) in &self.rules {
            let Some(caps) = re.captures(&content) else {
                continue;
            };
            let text = if rule.expand {
                let mut out = String::new();
                caps.expand(&rule.response, &mut out);
                out
            } else {
                rule.response.clone()
            };
            return Ok(ChatResponse {
                completion_tokens: text.split_whitespace().count() as u32,
                prompt_tokens: request.prompt_token_estimate(),
                text,
                latency_ms: 0,
                source: ResponseSource::Mock,
                retry_count: 0,
            });
        }
        Err(LlmError::NoRule)
    }
}
