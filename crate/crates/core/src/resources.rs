//! Versioned data files: HVDC corpus, lexicons, and prompt templates.
//!
//! Defaults are compiled in from `data/`; any of them can be replaced by a
//! file on disk through [`ResourcePaths`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::affect::{parse_hvdc_corpus, AffectError, EmotionLexicon, HvdcDefinition};
use crate::extraction::{EntityLexicon, PromptTemplate};

pub const HVDC_CORPUS_JSON: &str = include_str!("../data/hvdc_corpus.json");
pub const EMOTION_LEXICON_JSON: &str = include_str!("../data/emotion_lexicon.json");
pub const ENTITY_LEXICON_JSON: &str = include_str!("../data/entity_lexicon.json");
pub const PROMPTS_JSON: &str = include_str!("../data/prompts.json");
pub const STEMS_JSON: &str = include_str!("../data/stems.json");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourcePaths {
    pub corpus: Option<PathBuf>,
    pub emotion_lexicon: Option<PathBuf>,
    pub entity_lexicon: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompts {
    pub extraction: PromptTemplate,
    pub emotion: PromptTemplate,
}

#[derive(Debug, Clone)]
pub struct Resources {
    pub corpus: Vec<HvdcDefinition>,
    /// Where the corpus came from; `None` for the compiled-in copy.
    pub corpus_path: Option<PathBuf>,
    pub emotion_lexicon: EmotionLexicon,
    pub entity_lexicon: EntityLexicon,
    pub prompts: Prompts,
}

fn read(path: &Path) -> Result<String, AffectError> {
    std::fs::read_to_string(path).map_err(|source| AffectError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_or(path: Option<&Path>, default: &str) -> Result<String, AffectError> {
    match path {
        Some(p) => read(p),
        None => Ok(default.to_owned()),
    }
}

impl Resources {
    pub fn embedded() -> Self {
        Self::load(&ResourcePaths::default()).expect("compiled-in resources are valid")
    }

    pub fn load(paths: &ResourcePaths) -> Result<Self, AffectError> {
        let corpus = parse_hvdc_corpus(&read_or(paths.corpus.as_deref(), HVDC_CORPUS_JSON)?)?;
        let emotion_lexicon =
            EmotionLexicon::parse(&read_or(paths.emotion_lexicon.as_deref(), EMOTION_LEXICON_JSON)?)?;
        let entity_lexicon: EntityLexicon =
            serde_json::from_str(&read_or(paths.entity_lexicon.as_deref(), ENTITY_LEXICON_JSON)?)
                .map_err(|e| AffectError::LexiconInvalid(e.to_string()))?;
        let prompts: Prompts = serde_json::from_str(&read_or(paths.prompts.as_deref(), PROMPTS_JSON)?)
            .map_err(|e| AffectError::LexiconInvalid(format!("prompts: {e}")))?;
        Ok(Self {
            corpus,
            corpus_path: paths.corpus.clone(),
            emotion_lexicon,
            entity_lexicon,
            prompts,
        })
    }

    /// Versions stamped into every session event.
    pub fn template_versions(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("extraction_prompt".to_owned(), self.prompts.extraction.version.clone()),
            ("emotion_prompt".to_owned(), self.prompts.emotion.version.clone()),
            ("entity_lexicon".to_owned(), self.entity_lexicon.version.clone()),
            ("emotion_lexicon".to_owned(), self.emotion_lexicon.version.clone()),
        ])
    }
}
