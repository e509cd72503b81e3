use std::time::Duration;

use serde::Deserialize;

use super::{ChatRequest, GatewayError, Transport, TransportFailure};

pub const DEFAULT_API_KEY_ENV: &str = "SCOPETREE_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

/// Chat-completions POST over HTTP with bearer authentication.
#[derive(Debug)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl HttpTransport {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GatewayError::Configuration("API key is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Configuration(format!("http client: {e}")))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.into(),
            api_key,
        })
    }

    /// Reads the credential from the environment variable `key_env`.
    pub fn from_env(endpoint: impl Into<String>, key_env: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(key_env).map_err(|_| {
            GatewayError::Configuration(format!("environment variable {key_env} is not set"))
        })?;
        Self::new(endpoint, key, Duration::from_secs(120))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportFailure::Status {
                code: status.as_u16(),
                body,
            });
        }
        let reply: ChatReply = serde_json::from_str(&body)
            .map_err(|e| TransportFailure::BadResponse(format!("{e}: {body}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportFailure::BadResponse("no message content in reply".into()))
    }
}
