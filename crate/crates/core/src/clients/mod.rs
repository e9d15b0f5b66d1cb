//! Clients for the external text-completion and text-embedding endpoints.
//!
//! Both are traits so the pipeline can run against the HTTP implementations in
//! [`http`] or the deterministic doubles in [`mock`].

pub mod http;
pub mod mock;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::index::{EmbeddingVector, DEFAULT_DIMENSION};

pub use http::{HttpCompletionClient, HttpEmbedder};
pub use mock::{MockCompletionClient, MockEmbedder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("input must not be empty")]
    EmptyInput,
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
}

#[async_trait]
pub trait CompletionClient: Send + Sync {
    /// Returns the raw model text for `prompt`. No parsing happens here.
    async fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn model_name(&self) -> &str;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError>;
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_max_tokens() -> u32 {
    256
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:11434/api/generate".into(),
            model_name: "mistral:7b".into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            request_timeout_ms: default_timeout_ms(),
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.temperature >= 0.0) {
            return Err(ClientError::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ClientError::InvalidConfig("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedClientConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
}

impl Default for EmbedClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:11434/api/embeddings".into(),
            model_name: "nomic-embed-text".into(),
            dimension: DEFAULT_DIMENSION,
            request_timeout_ms: default_timeout_ms(),
        }
    }
}

impl EmbedClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.dimension == 0 {
            return Err(ClientError::InvalidConfig("dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

/// SHA-256 over length-prefixed parts. Stable across platforms and releases,
/// which `std::hash` is not.
pub fn stable_digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Hex key identifying a prompt in mock fixture tables.
pub fn prompt_key(prompt: &str) -> String {
    hex::encode(&stable_digest(&[prompt.as_bytes()])[..8])
}
