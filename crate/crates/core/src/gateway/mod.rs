//! Chat-completion access in three modes: live, record, and replay.
//!
//! A [`Gateway`] wraps a [`Transport`] (one HTTP attempt) with retry and
//! backoff, and optionally a [`FixtureStore`]. In replay mode the transport
//! is never touched; completions come only from fixtures keyed by
//! [`request_fingerprint`].

mod fixtures;
mod http;
mod parse;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixtures::{request_fingerprint, CompletionExchange, FixtureStore};
pub use http::{HttpTransport, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
pub use parse::{extract_items, parse_subtopics, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("no fixture for prompt {prompt:?} (fingerprint {fingerprint})")]
    FixtureMiss { prompt: String, fingerprint: String },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("fixture storage error: {0}")]
    Storage(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            model_name: "gpt-4".to_string(),
            temperature: 1.0,
            max_output_tokens: 512,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidParams("model_name is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a finite number >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidParams(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn single_user(prompt: &str, params: &ModelParams) -> Self {
        ChatRequest {
            model: params.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Status { code: u16, body: String },
    Network(String),
    BadResponse(String),
}

impl TransportFailure {
    /// Network errors, 429, and 5xx are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportFailure::Network(_) => true,
            TransportFailure::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportFailure::BadResponse(_) => false,
        }
    }
}

impl fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportFailure::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportFailure::Network(e) => write!(f, "network: {e}"),
            TransportFailure::BadResponse(e) => write!(f, "bad response: {e}"),
        }
    }
}

/// A single request/response exchange with a provider. No retries.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure>;
}

/// Transport that refuses every request and counts the attempts.
#[derive(Debug, Default)]
pub struct OfflineTransport {
    attempts: AtomicUsize,
}

impl OfflineTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Transport for OfflineTransport {
    fn send(&self, _request: &ChatRequest) -> Result<String, TransportFailure> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportFailure::BadResponse(
            "network access is disabled for this gateway".into(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Adds up to half of each delay at random.
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0 for the first retry).
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.mul_f64(self.factor.powi(retry as i32));
        if self.jitter {
            base + base.mul_f64(rand::thread_rng().gen_range(0.0..0.5))
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        })
    }
}

impl FromStr for GatewayMode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(GatewayError::Configuration(format!(
                "unknown mode {other:?} (expected live, record or replay)"
            ))),
        }
    }
}

/// Completion client shared across threads.
#[derive(Clone)]
pub struct Gateway {
    mode: GatewayMode,
    transport: Arc<dyn Transport>,
    fixtures: Option<Arc<FixtureStore>>,
    retry: RetryPolicy,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field(
                "fixtures",
                &self.fixtures.as_ref().map(|s| s.dir().to_path_buf()),
            )
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    /// Record and replay modes require a fixture store.
    pub fn new(
        mode: GatewayMode,
        transport: Arc<dyn Transport>,
        fixtures: Option<Arc<FixtureStore>>,
    ) -> Result<Self, GatewayError> {
        if mode != GatewayMode::Live && fixtures.is_none() {
            return Err(GatewayError::Configuration(format!(
                "{mode} mode needs a fixture store"
            )));
        }
        Ok(Gateway {
            mode,
            transport,
            fixtures,
            retry: RetryPolicy::default(),
        })
    }

    pub fn live(transport: Arc<dyn Transport>) -> Self {
        Self::new(GatewayMode::Live, transport, None).expect("live needs no fixtures")
    }

    pub fn recording(transport: Arc<dyn Transport>, fixtures: Arc<FixtureStore>) -> Self {
        Self::new(GatewayMode::Record, transport, Some(fixtures)).expect("fixtures given")
    }

    /// Replay-only gateway backed by an [`OfflineTransport`].
    pub fn replay(fixtures: Arc<FixtureStore>) -> Self {
        Self::new(
            GatewayMode::Replay,
            Arc::new(OfflineTransport::new()),
            Some(fixtures),
        )
        .expect("fixtures given")
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn fixtures(&self) -> Option<&Arc<FixtureStore>> {
        self.fixtures.as_ref()
    }

    pub fn complete(&self, prompt: &str, params: &ModelParams) -> Result<String, GatewayError> {
        params.validate()?;
        match self.mode {
            GatewayMode::Replay => {
                let fingerprint = request_fingerprint(prompt, params);
                let store = self.fixtures.as_ref().expect("replay has fixtures");
                match store.lookup(&fingerprint)? {
                    Some(exchange) => Ok(exchange.raw_response),
                    None => Err(GatewayError::FixtureMiss {
                        prompt: prompt.to_string(),
                        fingerprint,
                    }),
                }
            }
            GatewayMode::Live => self.send_with_retry(prompt, params),
            GatewayMode::Record => {
                let raw = self.send_with_retry(prompt, params)?;
                let store = self.fixtures.as_ref().expect("record has fixtures");
                store.record(&CompletionExchange::new(
                    prompt,
                    params.clone(),
                    raw.clone(),
                ))?;
                Ok(raw)
            }
        }
    }

    fn send_with_retry(&self, prompt: &str, params: &ModelParams) -> Result<String, GatewayError> {
        let request = ChatRequest::single_user(prompt, params);
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.transport.send(&request) {
                Ok(text) => return Ok(text),
                Err(failure) if failure.is_retryable() && attempt < max => {
                    let delay = self.retry.delay(attempt - 1);
                    tracing::warn!(attempt, %failure, ?delay, "completion failed, retrying");
                    std::thread::sleep(delay);
                }
                Err(failure) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        detail: failure.to_string(),
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, TransportFailure>>>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<String, TransportFailure>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Scripted {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies.lock().unwrap().pop().expect("scripted reply")
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            base_delay: Duration::from_millis(1),
            ..RetryPolicy::default()
        }
    }

    fn status(code: u16) -> Result<String, TransportFailure> {
        Err(TransportFailure::Status {
            code,
            body: String::new(),
        })
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let t = Scripted::new(vec![status(429), status(503), Ok("1. A".into())]);
        let gw = Gateway::live(t.clone()).with_retry(fast());
        assert_eq!(gw.complete("p", &ModelParams::default()).unwrap(), "1. A");
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let t = Scripted::new(vec![status(429), status(429), status(429), Ok("x".into())]);
        let gw = Gateway::live(t.clone()).with_retry(fast());
        let err = gw.complete("p", &ModelParams::default()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![status(401)]);
        let gw = Gateway::live(t.clone()).with_retry(fast());
        let err = gw.complete("p", &ModelParams::default()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 1, .. }));
    }

    #[test]
    fn request_shape() {
        let t = Scripted::new(vec![Ok("ok".into())]);
        let gw = Gateway::live(t.clone());
        gw.complete("List 5 subtopics of X.", &ModelParams::default())
            .unwrap();
        let seen = t.seen.lock().unwrap();
        let body = serde_json::to_value(&seen[0]).unwrap();
        assert_eq!(body["model"], "gpt-4");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "List 5 subtopics of X.");
        assert_eq!(body["temperature"], 1.0);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::open(dir.path()).unwrap());
        let t = Scripted::new(vec![Ok("1. A\n2. B".into())]);
        let params = ModelParams {
            temperature: 0.2,
            ..ModelParams::default()
        };
        let rec = Gateway::recording(t, store.clone());
        let raw = rec.complete("List 2 subtopics of X.", &params).unwrap();

        let offline = Arc::new(OfflineTransport::new());
        let replay = Gateway::new(GatewayMode::Replay, offline.clone(), Some(store)).unwrap();
        assert_eq!(
            replay.complete("List 2 subtopics of X.", &params).unwrap(),
            raw
        );
        assert_eq!(
            replay.complete("List 2 subtopics of X.", &params).unwrap(),
            raw
        );

        let warmer = ModelParams {
            temperature: 0.7,
            ..params
        };
        assert!(matches!(
            replay.complete("List 2 subtopics of X.", &warmer),
            Err(GatewayError::FixtureMiss { .. })
        ));
        assert_eq!(offline.attempts(), 0);
    }

    #[test]
    fn replay_needs_store() {
        assert!(matches!(
            Gateway::new(GatewayMode::Replay, Arc::new(OfflineTransport::new()), None),
            Err(GatewayError::Configuration(_))
        ));
    }

    #[test]
    fn params_checked() {
        let gw = Gateway::live(Arc::new(OfflineTransport::new()));
        let bad = ModelParams {
            model_name: " ".into(),
            ..ModelParams::default()
        };
        assert!(matches!(
            gw.complete("p", &bad),
            Err(GatewayError::InvalidParams(_))
        ));
        let bad = ModelParams {
            temperature: -0.5,
            ..ModelParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn backoff_grows() {
        let p = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(0), Duration::from_secs(1));
        assert_eq!(p.delay(1), Duration::from_secs(2));
        let j = RetryPolicy::default();
        let d = j.delay(1);
        assert!(d >= Duration::from_secs(2) && d < Duration::from_secs(3));
    }
}
