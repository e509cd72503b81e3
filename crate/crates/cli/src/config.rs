//! Optional TOML settings file. Command-line flags win over it.
//!
//! ```toml
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! api_key_env = "SCOPETREE_API_KEY"
//! model = "gpt-4"
//! temperature = 1.0
//! max_output_tokens = 512
//! parallelism = 4
//! format_hint = false
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use scopetree::gateway::{ModelParams, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
use scopetree::run::DEFAULT_PARALLELISM;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub parallelism: Option<usize>,
    pub format_hint: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("bad config {}", path.display()))
    }

    pub fn endpoint(&self) -> String {
        self.endpoint
            .clone()
            .unwrap_or_else(|| DEFAULT_ENDPOINT.into())
    }

    pub fn api_key_env(&self) -> String {
        self.api_key_env
            .clone()
            .unwrap_or_else(|| DEFAULT_API_KEY_ENV.into())
    }

    pub fn params(&self) -> ModelParams {
        let d = ModelParams::default();
        ModelParams {
            model_name: self.model.clone().unwrap_or(d.model_name),
            temperature: self.temperature.unwrap_or(d.temperature),
            max_output_tokens: self.max_output_tokens.unwrap_or(d.max_output_tokens),
        }
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(DEFAULT_PARALLELISM)
    }
}
