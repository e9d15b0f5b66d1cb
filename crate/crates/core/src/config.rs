//! Service configuration and pipeline assembly.
//!
//! One JSON file configures endpoints, thresholds, paths and mock mode.
//! Relative paths are resolved against the config file's directory, and the
//! `LLM_ENDPOINT`, `EMBED_ENDPOINT` and `GEN_ENDPOINT` environment variables
//! override the configured endpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{build_index, vector_cache_path, AffectError, EmotionClassifier, SocialClassifier, DEFAULT_NONE_THRESHOLD};
use crate::clients::http::{HttpCompletionClient, HttpEmbedder};
use crate::clients::mock::{MockCompletionClient, MockEmbedder};
use crate::clients::{ClientError, CompletionClient, EmbedClientConfig, Embedder, LlmClientConfig};
use crate::clock::Clock;
use crate::color::{ColorError, ColorMap, DEFAULT_MOTION_FACTOR};
use crate::extraction::{EntityExtractor, DEFAULT_MAX_ENTITIES};
use crate::generation::{GenConfig, GenError, GenerationClient, GenerationService, HttpGenerationService, MockGenerationService};
use crate::model::{EmotionLabel, SocialClass};
use crate::resources::{ResourcePaths, Resources};
use crate::session::{OrchestratorConfig, Pipeline};
use crate::soundscape::{Soundscape, DEFAULT_CROSSFADE_MS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Resources(#[from] AffectError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Generation(#[from] GenError),
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}
fn default_none_threshold() -> f64 {
    DEFAULT_NONE_THRESHOLD
}
fn default_max_entities() -> usize {
    DEFAULT_MAX_ENTITIES
}
fn default_crossfade_ms() -> u64 {
    DEFAULT_CROSSFADE_MS
}
fn default_motion_factor() -> f64 {
    DEFAULT_MOTION_FACTOR
}
fn default_plant_weight() -> f32 {
    0.9
}
fn default_tint() -> f64 {
    0.6
}

/// In-process stand-ins for all three external services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    #[serde(default)]
    pub seed: u64,
    /// Artificial latency of every generation job.
    #[serde(default)]
    pub generation_delay_ms: u64,
    /// Canned LLM answers and planted embeddings, see [`MockFixtures`].
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_plant_weight")]
    pub plant_weight: f32,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            generation_delay_ms: 0,
            fixtures: None,
            plant_weight: default_plant_weight(),
        }
    }
}

/// Settings passed through to the browser client at `/ui-config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiSettings {
    /// How far rendered clouds are tinted toward their ColorSpec (0 to 1).
    #[serde(default = "default_tint")]
    pub tint: f64,
    #[serde(default)]
    pub stt_endpoint: Option<String>,
    #[serde(default)]
    pub pause_ms: Option<u64>,
}

impl Default for UiSettings {
    fn default() -> Self {
        Self {
            tint: default_tint(),
            stt_endpoint: None,
            pause_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// When present, every external service is replaced by its mock.
    #[serde(default)]
    pub mock: Option<MockSettings>,
    #[serde(default)]
    pub llm: LlmClientConfig,
    #[serde(default)]
    pub embed: EmbedClientConfig,
    #[serde(default)]
    pub generation: GenConfig,
    #[serde(default)]
    pub session: OrchestratorConfig,
    #[serde(default = "default_none_threshold")]
    pub none_threshold: f64,
    #[serde(default = "default_max_entities")]
    pub max_entities: usize,
    #[serde(default = "default_crossfade_ms")]
    pub crossfade_ms: u64,
    #[serde(default = "default_motion_factor")]
    pub motion_factor: f64,
    #[serde(default)]
    pub color_overrides: Option<PathBuf>,
    #[serde(default)]
    pub resources: ResourcePaths,
    /// Stem manifest (layer id → audio path); the compiled-in one when absent.
    #[serde(default)]
    pub stems: Option<PathBuf>,
    /// Directory served as static files (stems, UI bundle).
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub ui: UiSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl AppConfig {
    /// A config with every service mocked, for tests and offline runs.
    pub fn mock(seed: u64) -> Self {
        Self {
            mock: Some(MockSettings {
                seed,
                ..MockSettings::default()
            }),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: AppConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.color_overrides);
        fix(&mut self.stems);
        fix(&mut self.static_dir);
        fix(&mut self.session.log_dir);
        fix(&mut self.generation.cache_dir);
        fix(&mut self.resources.corpus);
        fix(&mut self.resources.emotion_lexicon);
        fix(&mut self.resources.entity_lexicon);
        fix(&mut self.resources.prompts);
        if let Some(m) = &mut self.mock {
            fix(&mut m.fixtures);
        }
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup("LLM_ENDPOINT") {
            self.llm.endpoint_url = v;
        }
        if let Some(v) = lookup("EMBED_ENDPOINT") {
            self.embed.endpoint_url = v;
        }
        if let Some(v) = lookup("GEN_ENDPOINT") {
            self.generation.endpoint_url = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.llm.validate()?;
        self.embed.validate()?;
        if !(0.0..=1.0).contains(&self.none_threshold) {
            return Err(ConfigError::Invalid(format!(
                "none_threshold must be in [0, 1], got {}",
                self.none_threshold
            )));
        }
        if self.max_entities == 0 {
            return Err(ConfigError::Invalid("max_entities must be positive".into()));
        }
        if !(self.motion_factor.is_finite() && self.motion_factor >= 0.0) {
            return Err(ConfigError::Invalid("motion_factor must be finite and >= 0".into()));
        }
        if self.generation.point_count == 0 || self.generation.max_concurrent_jobs == 0 {
            return Err(ConfigError::Invalid(
                "generation point_count and max_concurrent_jobs must be positive".into(),
            ));
        }
        self.session.placement.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn stem_manifest(&self) -> Result<BTreeMap<String, String>, ConfigError> {
        let (path, text) = match &self.stems {
            Some(p) => (
                p.clone(),
                std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?,
            ),
            None => (PathBuf::from("<embedded stems.json>"), crate::resources::STEMS_JSON.to_owned()),
        };
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path,
            message: e.to_string(),
        })
    }
}

/// One scripted utterance for mock mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureUtterance {
    pub text: String,
    /// Answer of the mock LLM to the emotion prompt for this text.
    #[serde(default)]
    pub emotion: Option<EmotionLabel>,
    /// The mock embedder places this text next to the class definition.
    #[serde(default)]
    pub social: Option<SocialClass>,
    /// Answer of the mock LLM to the extraction prompt for this text.
    #[serde(default)]
    pub entities: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    pub utterances: Vec<FixtureUtterance>,
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Builds mock clients that answer the real prompt templates with the
/// fixtures' planted labels.
pub fn mock_clients(
    fixtures: &MockFixtures,
    resources: &Resources,
    extractor: &EntityExtractor,
    emotion: &EmotionClassifier,
    settings: &MockSettings,
    dim: usize,
) -> Result<(MockCompletionClient, MockEmbedder), ConfigError> {
    let mut llm = MockCompletionClient::new(settings.seed);
    let mut embedder = MockEmbedder::new(settings.seed, dim);
    for u in &fixtures.utterances {
        let text = u.text.trim();
        if text.is_empty() {
            return Err(ConfigError::Invalid("fixture utterance with empty text".into()));
        }
        if let Some(label) = u.emotion {
            llm.insert_fixture(&emotion.build_prompt(text), label.code());
        }
        if let Some(entities) = &u.entities {
            let prompt = extractor
                .build_extraction_prompt(text)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            llm.insert_fixture(&prompt, serde_json::to_string(entities).expect("strings serialize"));
        }
        match u.social {
            Some(SocialClass::None) | None => {}
            Some(class) => {
                let def = resources
                    .corpus
                    .iter()
                    .find(|d| d.label == class)
                    .ok_or_else(|| ConfigError::Invalid(format!("corpus has no definition for {class}")))?;
                embedder.plant_near(text, &def.definition, settings.plant_weight);
            }
        }
    }
    Ok((llm, embedder))
}

/// Loads resources, connects (or mocks) the external services, and embeds the
/// HVDC corpus into the social index.
pub async fn build_pipeline(cfg: &AppConfig, clock: Arc<dyn Clock>) -> Result<Pipeline, ConfigError> {
    let fixtures = match cfg.mock.as_ref().and_then(|m| m.fixtures.as_ref()) {
        Some(p) => MockFixtures::load(p)?,
        None => MockFixtures::default(),
    };
    build_pipeline_with_fixtures(cfg, &fixtures, clock).await
}

/// Like [`build_pipeline`] but with in-memory fixtures for mock mode (the
/// config's fixture path is ignored).
pub async fn build_pipeline_with_fixtures(
    cfg: &AppConfig,
    fixtures: &MockFixtures,
    clock: Arc<dyn Clock>,
) -> Result<Pipeline, ConfigError> {
    let resources = Resources::load(&cfg.resources)?;
    let extractor = EntityExtractor::new(
        resources.prompts.extraction.clone(),
        resources.entity_lexicon.clone(),
        cfg.max_entities,
    );
    let emotion = EmotionClassifier::new(resources.prompts.emotion.clone(), resources.emotion_lexicon.clone());
    let mut colors = ColorMap::default();
    colors.motion_factor = cfg.motion_factor;
    if let Some(path) = &cfg.color_overrides {
        colors = colors.load_overrides(path)?;
    }

    let (llm, embedder, service, cache_path): (
        Arc<dyn CompletionClient>,
        Arc<dyn Embedder>,
        Arc<dyn GenerationService>,
        Option<PathBuf>,
    ) = match &cfg.mock {
        Some(m) => {
            let (llm, embedder) = mock_clients(fixtures, &resources, &extractor, &emotion, m, cfg.embed.dimension)?;
            let service = MockGenerationService::new(m.seed, cfg.generation.point_count)
                .with_delay(Duration::from_millis(m.generation_delay_ms));
            (Arc::new(llm), Arc::new(embedder), Arc::new(service), None)
        }
        None => (
            Arc::new(HttpCompletionClient::new(cfg.llm.clone())?),
            Arc::new(HttpEmbedder::new(cfg.embed.clone())?),
            Arc::new(HttpGenerationService::new(
                cfg.generation.endpoint_url.clone(),
                cfg.generation.gen_timeout(),
            )?),
            resources.corpus_path.as_deref().map(vector_cache_path),
        ),
    };

    let index = build_index(&resources.corpus, embedder.as_ref(), cache_path.as_deref()).await?;
    let social = SocialClassifier::new(Arc::new(index), cfg.none_threshold);
    let generation = GenerationClient::new(cfg.generation.clone(), service, clock);
    Ok(Pipeline {
        template_versions: resources.template_versions(),
        extractor,
        emotion,
        social,
        llm,
        embedder,
        colors,
        soundscape: Soundscape::new(cfg.crossfade_ms),
        generation,
    })
}
