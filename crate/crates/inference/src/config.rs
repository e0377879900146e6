use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::InferenceError;

fn default_base_url() -> String {
    "http://127.0.0.1:8080".into()
}
fn default_model() -> String {
    "local".into()
}
fn default_max_tokens() -> u32 {
    8
}
fn default_timeout() -> f64 {
    120.0
}
fn default_context_limit() -> usize {
    4096
}
fn default_stream() -> bool {
    true
}

/// Connection and decoding settings of one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Whole-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Prompt budget in whitespace-separated tokens.
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
    #[serde(default = "default_stream")]
    pub stream: bool,
    /// Server process to sample resident memory from while benchmarking.
    #[serde(default)]
    pub backend_pid: Option<u32>,
    /// Free-text quantization tag copied into benchmark records.
    #[serde(default)]
    pub quantization: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: default_base_url(),
            model: default_model(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            context_limit: default_context_limit(),
            stream: default_stream(),
            backend_pid: None,
            quantization: None,
        }
    }
}

impl BackendConfig {
    pub fn with_url(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidConfig(m.into()));
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout_secs must be positive");
        }
        if self.context_limit == 0 {
            return bad("context_limit must be positive");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if reqwest::Url::parse(&self.base_url).is_err() {
            return bad("base_url is not a valid URL");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }
}

/// Whitespace token count, the client-side stand-in for the backend's
/// tokenizer.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
