//! Recorded completions, one JSON file per request fingerprint.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GatewayError, ModelParams};

/// Stable hash of the parts of a request that determine its response.
pub fn request_fingerprint(prompt: &str, params: &ModelParams) -> String {
    // serde_json maps sort keys, so this encoding is canonical.
    let key = serde_json::json!({
        "model_name": params.model_name,
        "prompt": prompt,
        "temperature": params.temperature,
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionExchange {
    pub prompt: String,
    pub params: ModelParams,
    pub raw_response: String,
    pub request_fingerprint: String,
    pub timestamp: DateTime<Utc>,
}

impl CompletionExchange {
    pub fn new(
        prompt: impl Into<String>,
        params: ModelParams,
        raw_response: impl Into<String>,
    ) -> Self {
        let prompt = prompt.into();
        CompletionExchange {
            request_fingerprint: request_fingerprint(&prompt, &params),
            prompt,
            params,
            raw_response: raw_response.into(),
            timestamp: Utc::now(),
        }
    }
}

/// Directory of fixture files named `<fingerprint>.json`.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        Ok(FixtureStore {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{fingerprint}.json"))
    }

    /// Writes `exchange`, replacing any fixture with the same fingerprint.
    pub fn record(&self, exchange: &CompletionExchange) -> Result<PathBuf, GatewayError> {
        let path = self.path_for(&exchange.request_fingerprint);
        let mut body = serde_json::to_string_pretty(exchange)
            .map_err(|e| GatewayError::Storage(e.to_string()))?;
        body.push('\n');
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if path.exists() {
            tracing::warn!(
                fingerprint = %exchange.request_fingerprint,
                "overwriting existing fixture"
            );
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|e| storage(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| storage(&path, e))?;
        Ok(path)
    }

    pub fn lookup(&self, fingerprint: &str) -> Result<Option<CompletionExchange>, GatewayError> {
        let path = self.path_for(fingerprint);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(storage(&path, e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| GatewayError::Storage(format!("{}: {e}", path.display())))
    }

    /// Number of fixture files currently in the store.
    pub fn len(&self) -> Result<usize, GatewayError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| storage(&self.dir, e))?;
        Ok(entries
            .filter_map(Result::ok)
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count())
    }

    pub fn is_empty(&self) -> Result<bool, GatewayError> {
        self.len().map(|n| n == 0)
    }
}

fn storage(path: &Path, err: io::Error) -> GatewayError {
    GatewayError::Storage(format!("{}: {err}", path.display()))
}
