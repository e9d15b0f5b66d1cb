//! Text-to-3D generation: service abstraction, wire format, job queue and cache.

pub mod mock;
pub mod queue;
pub mod wire;

use std::path::PathBuf;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{mock_generate, MockGenerationService};
pub use queue::{cache_key, normalize_prompt, GenJob, GenerationClient, JobHandle, JobProgress, JobState};
pub use wire::{parse_cloud, serialize_cloud, MalformedCloud, PointCloud};

pub const DEFAULT_POINT_COUNT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("generation queue full ({capacity} pending)")]
    QueueFull { capacity: usize },
    #[error("generation service error: {0}")]
    Service(String),
    #[error("generation service unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Malformed(#[from] MalformedCloud),
}

/// Anything that turns a single-entity prompt into a point cloud.
#[async_trait]
pub trait GenerationService: Send + Sync {
    async fn generate(&self, prompt: &str) -> Result<PointCloud, GenError>;
}

fn default_point_count() -> usize {
    DEFAULT_POINT_COUNT
}
fn default_max_concurrent() -> usize {
    1
}
fn default_queue_capacity() -> usize {
    16
}
fn default_gen_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default = "default_point_count")]
    pub point_count: usize,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_jobs: usize,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default = "default_gen_timeout_ms")]
    pub gen_timeout_ms: u64,
    /// Spill directory for finished clouds, one `<cache_key>.opc` per prompt.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8090/generate".into(),
            point_count: DEFAULT_POINT_COUNT,
            max_concurrent_jobs: default_max_concurrent(),
            queue_capacity: default_queue_capacity(),
            gen_timeout_ms: default_gen_timeout_ms(),
            cache_dir: None,
        }
    }
}

impl GenConfig {
    pub fn gen_timeout(&self) -> Duration {
        Duration::from_millis(self.gen_timeout_ms)
    }
}

/// HTTP adapter: `POST {"prompt": ..}` answered either with an `OPC1` body or
/// with JSON `{"points": [[x,y,z],..], "colors": [[r,g,b],..]}`.
pub struct HttpGenerationService {
    endpoint_url: String,
    client: reqwest::Client,
}

#[derive(Deserialize)]
struct JsonCloud {
    points: Vec<[f32; 3]>,
    #[serde(default)]
    colors: Option<Vec<[u8; 3]>>,
}

impl HttpGenerationService {
    pub fn new(endpoint_url: impl Into<String>, timeout: Duration) -> Result<Self, GenError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenError::Unavailable(e.to_string()))?;
        Ok(Self {
            endpoint_url: endpoint_url.into(),
            client,
        })
    }
}

#[async_trait]
impl GenerationService for HttpGenerationService {
    async fn generate(&self, prompt: &str) -> Result<PointCloud, GenError> {
        let resp = self
            .client
            .post(&self.endpoint_url)
            .json(&serde_json::json!({ "prompt": prompt }))
            .send()
            .await
            .map_err(|e| GenError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(GenError::Service(format!("HTTP {}", resp.status())));
        }
        let is_json = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("json"));
        let body = resp
            .bytes()
            .await
            .map_err(|e| GenError::Unavailable(e.to_string()))?;
        let mut cloud = if is_json {
            let j: JsonCloud =
                serde_json::from_slice(&body).map_err(|e| GenError::Service(e.to_string()))?;
            let n = j.points.len();
            PointCloud::new(j.points, j.colors.unwrap_or_else(|| vec![[200, 200, 200]; n]), prompt)?
        } else {
            parse_cloud(&body)?
        };
        cloud.prompt = prompt.to_owned();
        cloud.normalize();
        Ok(cloud)
    }
}
