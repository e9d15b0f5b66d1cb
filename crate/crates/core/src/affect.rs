//! Per-utterance affect: the dominant social interaction (nearest HVDC
//! subclass definition by cosine similarity) and the dominant emotion
//! (constrained LLM label with a keyword-lexicon fallback).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{stable_digest, CompletionClient, Embedder};
use crate::extraction::PromptTemplate;
use crate::index::{EmbeddingIndex, EmbeddingVector, IndexEntry, IndexError};
use crate::model::{EmotionLabel, SocialClass, Utterance};

pub const DEFAULT_NONE_THRESHOLD: f64 = 0.35;

/// Fixed tie-break order for the lexicon fallback, highest priority first.
pub const EMOTION_PRIORITY: [EmotionLabel; 6] = [
    EmotionLabel::Anger,
    EmotionLabel::Apprehension,
    EmotionLabel::Sadness,
    EmotionLabel::Confusion,
    EmotionLabel::HaExcited,
    EmotionLabel::HaPeaceful,
];

#[derive(Debug, Error)]
pub enum AffectError {
    #[error("invalid HVDC corpus: {0}")]
    CorpusInvalid(String),
    #[error("invalid emotion lexicon: {0}")]
    LexiconInvalid(String),
    #[error("embedding the corpus failed for {id}: {source}")]
    Embedding {
        id: String,
        #[source]
        source: crate::clients::ClientError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HvdcDefinition {
    pub id: String,
    pub label: SocialClass,
    pub definition: String,
}

#[derive(Deserialize)]
struct RawCorpusEntry {
    id: String,
    label: String,
    definition: String,
}

pub fn load_hvdc_corpus(path: &Path) -> Result<Vec<HvdcDefinition>, AffectError> {
    let text = std::fs::read_to_string(path).map_err(|source| AffectError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_hvdc_corpus(&text)
}

/// Parses and validates a corpus: exactly the 20 subclasses, each once, with
/// non-empty definitions and unique ids.
pub fn parse_hvdc_corpus(json: &str) -> Result<Vec<HvdcDefinition>, AffectError> {
    let invalid = AffectError::CorpusInvalid;
    let raw: Vec<RawCorpusEntry> =
        serde_json::from_str(json).map_err(|e| invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(raw.len());
    let mut labels = HashSet::new();
    let mut ids = HashSet::new();
    for entry in raw {
        let label: SocialClass = entry
            .label
            .parse()
            .map_err(|_| invalid(format!("unknown label {:?}", entry.label)))?;
        if label == SocialClass::None {
            return Err(invalid("NONE is not a corpus label".into()));
        }
        if !labels.insert(label) {
            return Err(invalid(format!("duplicate label {label}")));
        }
        if !ids.insert(entry.id.clone()) {
            return Err(invalid(format!("duplicate id {:?}", entry.id)));
        }
        if entry.definition.trim().is_empty() {
            return Err(invalid(format!("empty definition for {label}")));
        }
        out.push(HvdcDefinition {
            id: entry.id,
            label,
            definition: entry.definition,
        });
    }
    let missing: Vec<String> = SocialClass::subclasses()
        .filter(|c| !labels.contains(c))
        .map(|c| c.code())
        .collect();
    if !missing.is_empty() {
        return Err(invalid(format!("missing labels {}", missing.join(", "))));
    }
    if out.len() != 20 {
        return Err(invalid(format!("expected 20 entries, found {}", out.len())));
    }
    Ok(out)
}

/// Sidecar cache stored next to the corpus as `<corpus>.vec.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorCache {
    pub model: String,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f32>>,
}

pub fn vector_cache_path(corpus_path: &Path) -> PathBuf {
    let mut s = corpus_path.as_os_str().to_owned();
    s.push(".vec.json");
    PathBuf::from(s)
}

/// Embeds every definition and loads it into a fresh index. When `cache_path`
/// is given, a cache matching the embedder's model and dimension is reused and
/// a stale or missing one is rewritten.
pub async fn build_index(
    corpus: &[HvdcDefinition],
    embedder: &dyn Embedder,
    cache_path: Option<&Path>,
) -> Result<EmbeddingIndex, AffectError> {
    let cached = cache_path
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|s| serde_json::from_str::<VectorCache>(&s).ok())
        .filter(|c| c.model == embedder.model_name() && c.dim == embedder.dimension());
    let mut cache = VectorCache {
        model: embedder.model_name().to_owned(),
        dim: embedder.dimension(),
        vectors: BTreeMap::new(),
    };
    let mut dirty = cached.is_none();
    let mut index = EmbeddingIndex::new(embedder.dimension());
    for def in corpus {
        let hit = cached
            .as_ref()
            .and_then(|c| c.vectors.get(&def.id))
            .filter(|v| v.len() == embedder.dimension())
            .cloned();
        let vector = match hit {
            Some(v) => EmbeddingVector::new(v)?,
            None => {
                dirty = true;
                embedder
                    .embed(&def.definition)
                    .await
                    .map_err(|source| AffectError::Embedding {
                        id: def.id.clone(),
                        source,
                    })?
            }
        };
        cache.vectors.insert(def.id.clone(), vector.as_slice().to_vec());
        index.insert(IndexEntry {
            id: def.id.clone(),
            label: def.label,
            definition_text: def.definition.clone(),
            vector,
        })?;
    }
    if let (Some(path), true) = (cache_path, dirty) {
        let body = serde_json::to_string(&cache).expect("cache serializes");
        if let Err(err) = std::fs::write(path, body) {
            tracing::warn!(%err, path = %path.display(), "could not write embedding cache");
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerUp {
    pub class: SocialClass,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialResult {
    pub class: SocialClass,
    pub score: f64,
    pub runner_up: Option<RunnerUp>,
    /// True when the embedding endpoint failed and the result degraded to NONE.
    #[serde(default)]
    pub used_fallback: bool,
}

impl SocialResult {
    fn none(used_fallback: bool) -> Self {
        Self {
            class: SocialClass::None,
            score: 0.0,
            runner_up: None,
            used_fallback,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SocialClassifier {
    pub index: Arc<EmbeddingIndex>,
    pub none_threshold: f64,
}

impl SocialClassifier {
    pub fn new(index: Arc<EmbeddingIndex>, none_threshold: f64) -> Self {
        Self {
            index,
            none_threshold,
        }
    }

    pub async fn classify_social(&self, utterance: &Utterance, embedder: &dyn Embedder) -> SocialResult {
        let query = match embedder.embed(&utterance.text).await {
            Ok(v) => v,
            Err(err) => {
                tracing::warn!(%err, seq = utterance.seq, "social classification degraded to NONE");
                return SocialResult::none(true);
            }
        };
        self.classify_vector(&query).unwrap_or_else(|err| {
            tracing::warn!(%err, seq = utterance.seq, "social classification degraded to NONE");
            SocialResult::none(true)
        })
    }

    /// Classification given an already computed query embedding.
    pub fn classify_vector(&self, query: &EmbeddingVector) -> Result<SocialResult, IndexError> {
        let hits = self.index.query_top_k(query, 2)?;
        let top = &hits[0];
        if top.score < self.none_threshold {
            return Ok(SocialResult::none(false));
        }
        Ok(SocialResult {
            class: top.label,
            score: top.score,
            runner_up: hits.get(1).map(|h| RunnerUp {
                class: h.label,
                score: h.score,
            }),
            used_fallback: false,
        })
    }
}

/// Six keyword lists, one per emotion label, all lowercase.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionLexicon {
    pub version: String,
    keywords: HashMap<EmotionLabel, Vec<String>>,
}

impl EmotionLexicon {
    pub fn parse(json: &str) -> Result<Self, AffectError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(json).map_err(|e| AffectError::LexiconInvalid(e.to_string()))?;
        let mut keywords = HashMap::new();
        for (k, words) in raw {
            let label: EmotionLabel = k
                .parse()
                .map_err(|_| AffectError::LexiconInvalid(format!("unknown label {k:?}")))?;
            keywords.insert(label, words.iter().map(|w| w.trim().to_lowercase()).collect());
        }
        if let Some(missing) = EmotionLabel::ALL.iter().find(|l| !keywords.contains_key(l)) {
            return Err(AffectError::LexiconInvalid(format!("missing label {missing}")));
        }
        let version = format!(
            "emotion-lexicon-{}",
            hex::encode(&stable_digest(&[json.as_bytes()])[..4])
        );
        Ok(Self { version, keywords })
    }

    /// Keyword occurrence count per label for `text`.
    pub fn hits(&self, text: &str) -> HashMap<EmotionLabel, usize> {
        let words: Vec<String> = text
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        self.keywords
            .iter()
            .map(|(label, kws)| {
                let n = kws
                    .iter()
                    .map(|k| {
                        let kw: Vec<&str> = k.split_whitespace().collect();
                        if kw.is_empty() {
                            return 0;
                        }
                        words
                            .windows(kw.len())
                            .filter(|w| w.iter().zip(&kw).all(|(a, b)| a == b))
                            .count()
                    })
                    .sum();
                (*label, n)
            })
            .collect()
    }

    /// Highest hit count wins, ties by [`EMOTION_PRIORITY`], no hits → `HaPeaceful`.
    pub fn classify(&self, text: &str) -> EmotionLabel {
        let hits = self.hits(text);
        let mut best = EmotionLabel::HaPeaceful;
        let mut best_n = 0;
        for label in EMOTION_PRIORITY {
            let n = hits.get(&label).copied().unwrap_or(0);
            if n > best_n {
                best = label;
                best_n = n;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionResult {
    pub label: EmotionLabel,
    pub used_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct EmotionClassifier {
    pub template: PromptTemplate,
    pub lexicon: EmotionLexicon,
}

impl EmotionClassifier {
    pub fn new(template: PromptTemplate, lexicon: EmotionLexicon) -> Self {
        Self { template, lexicon }
    }

    pub fn build_prompt(&self, text: &str) -> String {
        self.template.render(text, &[])
    }

    pub async fn classify_emotion(
        &self,
        utterance: &Utterance,
        llm: &dyn CompletionClient,
    ) -> EmotionResult {
        let parsed = match llm.complete(&self.build_prompt(&utterance.text)).await {
            Ok(raw) => parse_emotion_response(&raw),
            Err(err) => {
                tracing::warn!(%err, seq = utterance.seq, "emotion endpoint failed, using lexicon");
                None
            }
        };
        match parsed {
            Some(label) => EmotionResult {
                label,
                used_fallback: false,
            },
            None => EmotionResult {
                label: self.lexicon.classify(&utterance.text),
                used_fallback: true,
            },
        }
    }
}

/// Accepts a response whose canonical label tokens (case-sensitive, split on
/// anything but `[A-Z_]`) name exactly one distinct label.
pub fn parse_emotion_response(raw: &str) -> Option<EmotionLabel> {
    let mut found: Option<EmotionLabel> = None;
    for token in raw.split(|c: char| !(c.is_ascii_uppercase() || c == '_')) {
        if let Ok(label) = token.parse::<EmotionLabel>() {
            match found {
                Some(prev) if prev != label => return None,
                _ => found = Some(label),
            }
        }
    }
    found
}
