use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, ResponseSource};
use crate::http::{self, HttpRequest, HttpTransport, Method, RetryFailure, RetryPolicy, UreqTransport};

pub const ENV_API_BASE: &str = "ARMOVE_API_BASE";
pub const ENV_API_KEY: &str = "ARMOVE_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl LiveConfig {
    pub fn from_env() -> Result<Self, LlmError> {
        let base_url = std::env::var(ENV_API_BASE)
            .map_err(|_| LlmError::Config(format!("{ENV_API_BASE} is not set")))?;
        let api_key = std::env::var(ENV_API_KEY)
            .map_err(|_| LlmError::Config(format!("{ENV_API_KEY} is not set")))?;
        Ok(Self {
            base_url,
            api_key,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        })
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|p| p.into_inner());
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap_or_else(|p| p.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

/// OpenAI-compatible `/chat/completions` client with bearer auth.
pub struct LiveBackend {
    cfg: LiveConfig,
    transport: Arc<dyn HttpTransport>,
    in_flight: InFlight,
}

impl LiveBackend {
    pub fn new(cfg: LiveConfig, transport: Arc<dyn HttpTransport>) -> Self {
        let limit = cfg.max_in_flight.max(1);
        Self {
            cfg,
            transport,
            in_flight: InFlight {
                limit,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Ok(Self::new(
            LiveConfig::from_env()?,
            Arc::new(UreqTransport::new(Duration::from_secs(120))),
        ))
    }

    fn redact(&self, text: &str) -> String {
        if self.cfg.api_key.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.cfg.api_key, "[REDACTED]")
        }
    }
}

pub(crate) fn request_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model_id,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let http_request = HttpRequest {
            method: Method::Post,
            url: format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/')),
            query: vec![],
            headers: vec![
                ("Authorization".into(), format!("Bearer {}", self.cfg.api_key)),
                ("Content-Type".into(), "application/json".into()),
            ],
            body: Some(request_body(request).to_string()),
        };
        let _slot = self.in_flight.acquire();
        let started = Instant::now();
        let (resp, retries) = http::send_with_retry(self.transport.as_ref(), &http_request, &self.cfg.retry)
            .map_err(|(failure, retries)| match failure {
                RetryFailure::Status { status, body } => LlmError::Backend {
                    status: Some(status),
                    retries,
                    message: self.redact(&body),
                },
                RetryFailure::Transport(e) => LlmError::Backend {
                    status: None,
                    retries,
                    message: self.redact(&e.to_string()),
                },
            })?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let v: Value = serde_json::from_str(&resp.body).map_err(|e| LlmError::Backend {
            status: Some(resp.status),
            retries,
            message: format!("malformed completion body: {e}"),
        })?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::Backend {
                status: Some(resp.status),
                retries,
                message: "completion body has no choices[0].message.content".into(),
            })?
            .to_string();
        let usage = |k: &str| v["usage"][k].as_u64().unwrap_or(0) as u32;
        Ok(ChatResponse {
            text,
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
            latency_ms,
            source: ResponseSource::Live,
            retry_count: retries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::stub::ScriptedTransport;
    use crate::llm::ChatMessage;

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":7,"completion_tokens":1}}"#;

    fn backend(t: Arc<ScriptedTransport>) -> LiveBackend {
        LiveBackend::new(
            LiveConfig {
                base_url: "http://llm.invalid/v1/".into(),
                api_key: "sk-secret".into(),
                retry: RetryPolicy::no_delay(3),
                max_in_flight: 2,
            },
            t,
        )
    }

    fn req() -> ChatRequest {
        ChatRequest::new("gpt-4o-mini", vec![ChatMessage::user("hello")])
    }

    #[test]
    fn retries_through_rate_limits() {
        let t = Arc::new(ScriptedTransport::new(vec![
            ScriptedTransport::status(429, ""),
            ScriptedTransport::status(429, ""),
            ScriptedTransport::status(200, OK),
        ]));
        let r = backend(t.clone()).complete(&req()).unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.retry_count, 2);
        assert_eq!(r.prompt_tokens, 7);
        assert_eq!(t.calls(), 3);

        let sent = &t.requests()[0];
        assert_eq!(sent.url, "http://llm.invalid/v1/chat/completions");
        assert!(sent.headers.contains(&("Authorization".into(), "Bearer sk-secret".into())));
        let body: Value = serde_json::from_str(sent.body.as_ref().unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-4o-mini");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["max_tokens"], 1024);
    }

    #[test]
    fn exhausted_retries_report_status_and_redact_key() {
        let t = Arc::new(ScriptedTransport::new(vec![
            ScriptedTransport::status(500, "boom sk-secret");
            4
        ]));
        match backend(t).complete(&req()).unwrap_err() {
            LlmError::Backend {
                status,
                retries,
                message,
            } => {
                assert_eq!(status, Some(500));
                assert_eq!(retries, 3);
                assert!(!message.contains("sk-secret"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
