//! Completion backends: a remote chat-completion client, scripted playback
//! for tests, and a persistent record/replay cache.
//!
//! Everything downstream (policies, evaluation, simulation) talks to the
//! [`CompletionClient`] trait, so a fully populated cache or a scripted
//! client makes entire runs reproducible without network access.

pub mod cache;
pub mod remote;
pub mod scripted;

pub use cache::{CacheStats, CachingClient, ImportSummary, ResponseCache};
pub use remote::{RemoteClient, RemoteConfig};
pub use scripted::{KeyedScriptedClient, NoBackendClient, RuleClient, ScriptedClient};

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the remote API key.
pub const API_KEY_ENV: &str = "USERSIM_API_KEY";

/// One completion request. `temperature` defaults to 0 so repeated runs are
/// as deterministic as the upstream model allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model_id: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: 32,
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.prompt.is_empty() {
            return Err(ClientError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ClientError::InvalidRequest(format!(
                "temperature {} is negative or NaN",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Deterministic cache key over the fields that determine the response:
    /// prompt, model id, temperature (exact bits), and max_tokens. Run ids
    /// and timestamps never enter the key.
    pub fn cache_key(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [self.prompt.as_bytes(), self.model_id.as_bytes()] {
            hasher.update((field.len() as u64).to_be_bytes());
            hasher.update(field);
        }
        hasher.update(self.temperature.to_bits().to_be_bytes());
        hasher.update(self.max_tokens.to_be_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected (HTTP {status}); check {API_KEY_ENV}")]
    Auth { status: u16 },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("upstream returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("scripted response queue exhausted after {served} responses")]
    QueueExhausted { served: usize },
    #[error("no scripted response for prompt (sha256 {hash})")]
    MissingScript { hash: String },
    #[error("no completion backend configured")]
    NoBackend,
    #[error("response not cached (key {key}) and the backend is cache-only")]
    CacheOnlyMiss { key: String },
    #[error("transport: {0}")]
    Transport(String),
}

impl ClientError {
    /// Errors that a retry against the same endpoint may fix.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Timeout(_) | ClientError::Transport(_) => true,
            ClientError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A completion backend. Implementations must be safe to call concurrently;
/// the evaluation pipeline shares one client across its worker pool.
#[async_trait]
pub trait CompletionClient: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError>;

    /// Short backend name for run metadata.
    fn name(&self) -> &'static str;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_covers_exactly_the_response_determining_fields() {
        let base = CompletionRequest::new("prompt", "model");
        let key = base.cache_key();
        assert_eq!(key.len(), 64);
        assert_eq!(key, base.cache_key());

        let mut other = base.clone();
        other.prompt = "prompt!".into();
        assert_ne!(key, other.cache_key());

        let mut other = base.clone();
        other.model_id = "model2".into();
        assert_ne!(key, other.cache_key());

        let mut other = base.clone();
        other.temperature = 0.5;
        assert_ne!(key, other.cache_key());

        let mut other = base.clone();
        other.max_tokens = 64;
        assert_ne!(key, other.cache_key());
    }

    #[test]
    fn cache_key_has_no_field_boundary_collisions() {
        let a = CompletionRequest::new("ab", "c");
        let b = CompletionRequest::new("a", "bc");
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[test]
    fn validation_rejects_empty_prompt_and_negative_temperature() {
        let ok = CompletionRequest::new("p", "m");
        assert!(ok.validate().is_ok());
        let empty = CompletionRequest::new("", "m");
        assert!(matches!(empty.validate(), Err(ClientError::InvalidRequest(_))));
        let mut neg = CompletionRequest::new("p", "m");
        neg.temperature = -1.0;
        assert!(matches!(neg.validate(), Err(ClientError::InvalidRequest(_))));
    }

    #[test]
    fn transient_classification() {
        assert!(ClientError::Timeout(Duration::from_secs(1)).is_transient());
        assert!(ClientError::Transport("reset".into()).is_transient());
        assert!(ClientError::Http { status: 429, body: String::new() }.is_transient());
        assert!(ClientError::Http { status: 503, body: String::new() }.is_transient());
        assert!(!ClientError::Http { status: 400, body: String::new() }.is_transient());
        assert!(!ClientError::Auth { status: 401 }.is_transient());
        assert!(!ClientError::Malformed("x".into()).is_transient());
    }
}
