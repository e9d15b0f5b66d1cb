use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ClientError, CompletionClient, EmbedClientConfig, Embedder, LlmClientConfig};
use crate::index::EmbeddingVector;

fn map_reqwest(err: reqwest::Error, timeout: std::time::Duration) -> ClientError {
    if err.is_timeout() {
        ClientError::Timeout(timeout)
    } else if err.is_decode() || err.is_body() {
        ClientError::MalformedResponse(err.to_string())
    } else {
        ClientError::EndpointUnavailable(err.to_string())
    }
}

fn build_client(timeout: std::time::Duration) -> Result<reqwest::Client, ClientError> {
    reqwest::Client::builder()
        .timeout(timeout)
        .connect_timeout(timeout)
        .build()
        .map_err(|e| ClientError::InvalidConfig(e.to_string()))
}

async fn post_json(
    client: &reqwest::Client,
    url: &str,
    body: &Value,
    timeout: std::time::Duration,
) -> Result<Value, ClientError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .await
        .map_err(|e| map_reqwest(e, timeout))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(ClientError::EndpointUnavailable(format!("HTTP {status} from {url}")));
    }
    let bytes = resp.bytes().await.map_err(|e| map_reqwest(e, timeout))?;
    serde_json::from_slice(&bytes).map_err(|e| ClientError::MalformedResponse(e.to_string()))
}

/// Completion client speaking `{"model", "prompt"}` JSON over HTTP POST.
///
/// Accepts the common response shapes: `{"response": ..}` (Ollama-style),
/// `{"choices": [{"text": ..}]}` (OpenAI-style completions), or `{"text": ..}`.
pub struct HttpCompletionClient {
    config: LlmClientConfig,
    client: reqwest::Client,
}

impl HttpCompletionClient {
    pub fn new(config: LlmClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let client = build_client(config.request_timeout())?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.config
    }
}

fn extract_completion(v: &Value) -> Option<String> {
    if let Some(s) = v.get("response").and_then(Value::as_str) {
        return Some(s.to_owned());
    }
    if let Some(s) = v.get("text").and_then(Value::as_str) {
        return Some(s.to_owned());
    }
    let choice = v.get("choices")?.get(0)?;
    choice
        .get("text")
        .and_then(Value::as_str)
        .or_else(|| choice.get("message")?.get("content")?.as_str())
        .map(str::to_owned)
}

#[async_trait]
impl CompletionClient for HttpCompletionClient {
    async fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        if prompt.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let body = json!({
            "model": self.config.model_name,
            "prompt": prompt,
            "stream": false,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "options": {
                "temperature": self.config.temperature,
                "num_predict": self.config.max_output_tokens,
            },
        });
        let timeout = self.config.request_timeout();
        let v = post_json(&self.client, &self.config.endpoint_url, &body, timeout).await?;
        extract_completion(&v)
            .ok_or_else(|| ClientError::MalformedResponse("no completion text in response".into()))
    }
}

/// Embedding client speaking `{"model", "input"}` JSON over HTTP POST.
pub struct HttpEmbedder {
    config: EmbedClientConfig,
    client: reqwest::Client,
}

impl HttpEmbedder {
    pub fn new(config: EmbedClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let client = build_client(config.request_timeout())?;
        Ok(Self { config, client })
    }
}

#[derive(Deserialize)]
struct DataItem {
    embedding: Vec<f32>,
}

fn extract_embedding(v: Value) -> Option<Vec<f32>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Shape {
        Single { embedding: Vec<f32> },
        Batch { embeddings: Vec<Vec<f32>> },
        OpenAi { data: Vec<DataItem> },
    }
    match serde_json::from_value::<Shape>(v).ok()? {
        Shape::Single { embedding } => Some(embedding),
        Shape::Batch { embeddings } => embeddings.into_iter().next(),
        Shape::OpenAi { data } => data.into_iter().next().map(|d| d.embedding),
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let body = json!({
            "model": self.config.model_name,
            "input": text,
            "prompt": text,
        });
        let timeout = self.config.request_timeout();
        let v = post_json(&self.client, &self.config.endpoint_url, &body, timeout).await?;
        let values = extract_embedding(v)
            .ok_or_else(|| ClientError::MalformedResponse("no embedding in response".into()))?;
        if values.len() != self.config.dimension {
            return Err(ClientError::DimensionMismatch {
                expected: self.config.dimension,
                actual: values.len(),
            });
        }
        EmbeddingVector::new(values).map_err(|e| ClientError::MalformedResponse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_shapes() {
        assert_eq!(extract_completion(&json!({"response": "SD"})).as_deref(), Some("SD"));
        assert_eq!(
            extract_completion(&json!({"choices": [{"text": "AN"}]})).as_deref(),
            Some("AN")
        );
        assert_eq!(
            extract_completion(&json!({"choices": [{"message": {"content": "CO"}}]})).as_deref(),
            Some("CO")
        );
        assert_eq!(extract_completion(&json!({"foo": 1})), None);
    }

    #[test]
    fn embedding_shapes() {
        assert_eq!(extract_embedding(json!({"embedding": [1.0, 2.0]})), Some(vec![1.0, 2.0]));
        assert_eq!(extract_embedding(json!({"embeddings": [[3.0]]})), Some(vec![3.0]));
        assert_eq!(extract_embedding(json!({"data": [{"embedding": [4.0]}]})), Some(vec![4.0]));
        assert_eq!(extract_embedding(json!({"nope": []})), None);
    }

    #[test]
    fn negative_temperature_rejected() {
        let cfg = LlmClientConfig {
            temperature: -0.5,
            ..Default::default()
        };
        assert!(matches!(HttpCompletionClient::new(cfg), Err(ClientError::InvalidConfig(_))));
        assert_eq!(LlmClientConfig::default().temperature, 0.0);
    }
}
