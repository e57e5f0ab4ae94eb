//! Minimal blocking HTTP layer shared by the geocoder and the chat backend.
//!
//! Everything network-facing goes through [`HttpTransport`] so tests can swap in
//! scripted or fail-on-call transports.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub query: Vec<(String, String)>,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Io(String),
}

pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Real network transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl HttpTransport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let result = match request.method {
            Method::Get => {
                let mut req = self.agent.get(&request.url);
                for (k, v) in &request.query {
                    req = req.query(k, v);
                }
                for (k, v) in &request.headers {
                    req = req.header(k, v);
                }
                req.call()
            }
            Method::Post => {
                let mut req = self.agent.post(&request.url);
                for (k, v) in &request.query {
                    req = req.query(k, v);
                }
                for (k, v) in &request.headers {
                    req = req.header(k, v);
                }
                req.send(request.body.as_deref().unwrap_or(""))
            }
        };
        match result {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| TransportError::Io(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Io(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

pub fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetryFailure {
    Status { status: u16, body: String },
    Transport(TransportError),
}

/// Sends `request`, retrying on 429, 5xx and transport errors.
///
/// Returns the final response and the number of retries it took.
pub fn send_with_retry(
    transport: &dyn HttpTransport,
    request: &HttpRequest,
    policy: &RetryPolicy,
) -> Result<(HttpResponse, u32), (RetryFailure, u32)> {
    let mut retries = 0;
    loop {
        let failure = match transport.send(request) {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok((resp, retries)),
            Ok(resp) if is_retryable_status(resp.status) => RetryFailure::Status {
                status: resp.status,
                body: resp.body,
            },
            Ok(resp) => {
                return Err((
                    RetryFailure::Status {
                        status: resp.status,
                        body: resp.body,
                    },
                    retries,
                ))
            }
            Err(e) => RetryFailure::Transport(e),
        };
        if retries >= policy.max_retries {
            return Err((failure, retries));
        }
        let delay = policy.delay_for(retries);
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        retries += 1;
    }
}

/// Enforces a minimum interval between consecutive requests.
pub struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            last: Mutex::new(None),
        }
    }

    /// Blocks until a request may be issued. The lock is held while sleeping,
    /// which serializes concurrent callers.
    pub fn acquire(&self) {
        let mut last = self.last.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Test transports.
pub mod stub {
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use super::*;

    /// Panics on any call. Used to prove a code path never touches the network.
    #[derive(Default)]
    pub struct FailOnCallTransport;

    impl HttpTransport for FailOnCallTransport {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            panic!("network access attempted in hermetic mode: {}", request.url);
        }
    }

    /// Replays a fixed sequence of outcomes and records every request.
    #[derive(Default)]
    pub struct ScriptedTransport {
        script: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
        requests: Mutex<Vec<HttpRequest>>,
        calls: AtomicUsize,
    }

    impl ScriptedTransport {
        pub fn new(script: Vec<Result<HttpResponse, TransportError>>) -> Self {
            Self {
                script: Mutex::new(script.into()),
                requests: Mutex::new(Vec::new()),
                calls: AtomicUsize::new(0),
            }
        }

        pub fn status(status: u16, body: &str) -> Result<HttpResponse, TransportError> {
            Ok(HttpResponse {
                status,
                body: body.to_string(),
            })
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }

        pub fn requests(&self) -> Vec<HttpRequest> {
            self.requests.lock().unwrap().clone()
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.requests.lock().unwrap().push(request.clone());
            self.script
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(TransportError::Io("script exhausted".into())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::stub::ScriptedTransport;
    use super::*;

    fn req() -> HttpRequest {
        HttpRequest {
            method: Method::Get,
            url: "http://example.invalid".into(),
            query: vec![],
            headers: vec![],
            body: None,
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let t = ScriptedTransport::new(vec![
            ScriptedTransport::status(429, ""),
            ScriptedTransport::status(503, ""),
            ScriptedTransport::status(200, "ok"),
        ]);
        let (resp, retries) = send_with_retry(&t, &req(), &RetryPolicy::no_delay(3)).unwrap();
        assert_eq!(resp.body, "ok");
        assert_eq!(retries, 2);
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let t = ScriptedTransport::new(vec![Err(TransportError::Timeout); 10]);
        let (failure, retries) = send_with_retry(&t, &req(), &RetryPolicy::no_delay(3)).unwrap_err();
        assert_eq!(failure, RetryFailure::Transport(TransportError::Timeout));
        assert_eq!(retries, 3);
        assert_eq!(t.calls(), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = ScriptedTransport::new(vec![ScriptedTransport::status(401, "no")]);
        let (failure, _) = send_with_retry(&t, &req(), &RetryPolicy::no_delay(3)).unwrap_err();
        assert!(matches!(failure, RetryFailure::Status { status: 401, .. }));
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_for(0), Duration::from_secs(1));
        assert_eq!(p.delay_for(1), Duration::from_secs(2));
        assert_eq!(p.delay_for(2), Duration::from_secs(4));
    }
}
