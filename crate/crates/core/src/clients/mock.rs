//! Deterministic test doubles for the model endpoints.
//!
//! Both mocks are pure functions of their seed, fixture tables, and input.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{prompt_key, stable_digest, ClientError, CompletionClient, Embedder};
use crate::index::{normalize, EmbeddingVector};

/// Responses returned for prompts absent from the fixture table. None of them
/// parse as an entity list or an emotion label, so unmatched prompts exercise
/// the fallback paths.
const CANNED: &[&str] = &[
    "I'm not sure how to answer that.",
    "Could you tell me more about the dream?",
    "That sounds like a vivid experience.",
    "Here is my analysis: it is hard to say.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFailure {
    Unavailable,
    Timeout,
    Malformed,
}

impl MockFailure {
    fn to_error(self) -> ClientError {
        match self {
            MockFailure::Unavailable => ClientError::EndpointUnavailable("mock endpoint down".into()),
            MockFailure::Timeout => ClientError::Timeout(std::time::Duration::from_secs(10)),
            MockFailure::Malformed => ClientError::MalformedResponse("mock malformed body".into()),
        }
    }
}

/// Completion mock: fixture lookup by [`prompt_key`], else a canned response
/// chosen by a seeded hash of the prompt.
#[derive(Debug, Default)]
pub struct MockCompletionClient {
    seed: u64,
    fixtures: HashMap<String, String>,
    failure: Option<MockFailure>,
    calls: AtomicUsize,
    transcript: Mutex<Vec<(String, String)>>,
}

impl MockCompletionClient {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    /// A client whose every call fails with the given error kind.
    pub fn failing(failure: MockFailure) -> Self {
        Self {
            failure: Some(failure),
            ..Default::default()
        }
    }

    pub fn with_fixture(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.insert_fixture(prompt, response);
        self
    }

    pub fn insert_fixture(&mut self, prompt: &str, response: impl Into<String>) {
        self.fixtures.insert(prompt_key(prompt), response.into());
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every (prompt, response) pair served so far, in call order.
    pub fn transcript(&self) -> Vec<(String, String)> {
        self.transcript.lock().unwrap().clone()
    }

    fn respond(&self, prompt: &str) -> String {
        if let Some(r) = self.fixtures.get(&prompt_key(prompt)) {
            return r.clone();
        }
        let d = stable_digest(&[&self.seed.to_le_bytes(), prompt.as_bytes()]);
        let pick = u64::from_le_bytes(d[..8].try_into().unwrap()) as usize % CANNED.len();
        CANNED[pick].to_owned()
    }
}

#[async_trait]
impl CompletionClient for MockCompletionClient {
    async fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        if prompt.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(f) = self.failure {
            return Err(f.to_error());
        }
        let response = self.respond(prompt);
        self.transcript
            .lock()
            .unwrap()
            .push((prompt.to_owned(), response.clone()));
        Ok(response)
    }
}

/// Embedding mock: a unit vector drawn from a ChaCha stream seeded by
/// `hash(seed, text)`, unless the text has an explicit override.
#[derive(Debug)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
    model: String,
    overrides: HashMap<String, EmbeddingVector>,
    failure: Option<MockFailure>,
    /// Forces responses of the wrong length, for contract tests.
    wrong_dim: Option<usize>,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            model: "mock-embed".into(),
            overrides: HashMap::new(),
            failure: None,
            wrong_dim: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn failing(dim: usize, failure: MockFailure) -> Self {
        Self {
            failure: Some(failure),
            ..Self::new(0, dim)
        }
    }

    pub fn returning_dimension(mut self, actual: usize) -> Self {
        self.wrong_dim = Some(actual);
        self
    }

    /// Pins the embedding of `text` (matched after trimming).
    pub fn set_override(&mut self, text: &str, vector: EmbeddingVector) {
        self.overrides.insert(text.trim().to_owned(), vector);
    }

    /// Pins `text` near `anchor`: `weight * hash(anchor) + (1 - weight) * hash(text)`,
    /// renormalized. With 768 dimensions and weight ≥ 0.6 the result is far
    /// closer to the anchor than to any other hashed text.
    pub fn plant_near(&mut self, text: &str, anchor: &str, weight: f32) {
        let a = self.hashed(anchor.trim(), self.dim);
        let t = self.hashed(text.trim(), self.dim);
        let mixed: Vec<f32> = a
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(x, y)| weight * x + (1.0 - weight) * y)
            .collect();
        let v = normalize(&EmbeddingVector::new(mixed).expect("finite"))
            .unwrap_or_else(|_| a.clone());
        self.set_override(text, v);
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// The hash-derived vector for `text`, ignoring overrides.
    pub fn hashed(&self, text: &str, dim: usize) -> EmbeddingVector {
        let d = stable_digest(&[b"embed", &self.seed.to_le_bytes(), text.as_bytes()]);
        let mut rng = ChaCha8Rng::from_seed(d);
        loop {
            let raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            if let Ok(v) = normalize(&EmbeddingVector::new(raw).expect("finite")) {
                return v;
            }
        }
    }
}

#[async_trait]
impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(f) = self.failure {
            return Err(f.to_error());
        }
        if let Some(actual) = self.wrong_dim {
            return Err(ClientError::DimensionMismatch {
                expected: self.dim,
                actual,
            });
        }
        if let Some(v) = self.overrides.get(text.trim()) {
            return Ok(v.clone());
        }
        Ok(self.hashed(text.trim(), self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn completion_is_deterministic_per_seed() {
        let a = MockCompletionClient::new(7);
        let b = MockCompletionClient::new(7);
        for p in ["one", "two", "three", "a dream about fog"] {
            assert_eq!(a.complete(p).await.unwrap(), b.complete(p).await.unwrap());
        }
        assert_eq!(a.transcript(), b.transcript());
        assert_eq!(a.call_count(), 4);
    }

    #[tokio::test]
    async fn fixtures_take_precedence() {
        let c = MockCompletionClient::new(1).with_fixture("classify this", "SD");
        assert_eq!(c.complete("classify this").await.unwrap(), "SD");
    }

    #[tokio::test]
    async fn empty_prompt_rejected() {
        let c = MockCompletionClient::new(1);
        assert_eq!(c.complete("  ").await, Err(ClientError::EmptyInput));
        assert_eq!(c.call_count(), 0);
    }

    #[tokio::test]
    async fn failing_client_surfaces_error() {
        let c = MockCompletionClient::failing(MockFailure::Unavailable);
        assert!(matches!(c.complete("x").await, Err(ClientError::EndpointUnavailable(_))));
    }

    #[tokio::test]
    async fn embedder_is_deterministic_unit_and_distinct() {
        let e = MockEmbedder::new(3, 64);
        let texts = [
            "a dark wave chased me",
            "my grandmother smiled",
            "fog everywhere",
            "fog everywhere.",
            "I was flying",
        ];
        let mut seen = Vec::new();
        for t in texts {
            let v = e.embed(t).await.unwrap();
            assert_eq!(v, e.embed(t).await.unwrap());
            assert_eq!(v.dim(), 64);
            assert!((v.norm() - 1.0).abs() < 1e-6);
            assert!(!seen.contains(&v), "collision on {t}");
            seen.push(v);
        }
    }

    #[tokio::test]
    async fn embedder_wrong_dimension() {
        let e = MockEmbedder::new(3, 64).returning_dimension(10);
        assert_eq!(
            e.embed("x").await,
            Err(ClientError::DimensionMismatch { expected: 64, actual: 10 })
        );
    }

    #[tokio::test]
    async fn planted_text_lands_near_anchor() {
        let mut e = MockEmbedder::new(3, 768);
        e.plant_near("they hugged", "friendly embrace definition", 0.8);
        let v = e.embed("they hugged").await.unwrap();
        let anchor = e.embed("friendly embrace definition").await.unwrap();
        let other = e.embed("unrelated text").await.unwrap();
        let c_anchor = crate::index::cosine(&v, &anchor).unwrap();
        let c_other = crate::index::cosine(&v, &other).unwrap();
        assert!(c_anchor > 0.9, "{c_anchor}");
        assert!(c_other < 0.2, "{c_other}");
    }
}
