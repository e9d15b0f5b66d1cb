//! Splits one utterance into single-entity generation prompts.
//!
//! The LLM is asked for a JSON array of short noun phrases. When the endpoint
//! fails or its output has no usable array, a lexicon heuristic takes over so
//! the pipeline never stalls.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::CompletionClient;
use crate::model::{DreamEntity, EntityKind, Utterance};

pub const DEFAULT_MAX_ENTITIES: usize = 3;
const MAX_LABEL_WORDS: usize = 5;
const SENTENCE_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error("utterance text is empty")]
    EmptyText,
    #[error("no JSON array of strings found in model output")]
    ParseFailure,
}

/// Word lists driving the fallback heuristic and the character/object split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityLexicon {
    pub version: String,
    pub stopwords: HashSet<String>,
    pub nouns: HashSet<String>,
    pub characters: HashSet<String>,
}

impl EntityLexicon {
    fn lookup(set: &HashSet<String>, word: &str) -> bool {
        set.contains(word)
            || word
                .strip_suffix("es")
                .is_some_and(|w| set.contains(w))
            || word.strip_suffix('s').is_some_and(|w| set.contains(w))
    }

    pub fn is_noun(&self, word: &str) -> bool {
        Self::lookup(&self.nouns, word) || Self::lookup(&self.characters, word)
    }

    pub fn is_character(&self, word: &str) -> bool {
        Self::lookup(&self.characters, word)
    }

    /// Character if the head noun (last word) is a person or animal word.
    pub fn kind_of(&self, label: &str) -> EntityKind {
        match tokenize(label).last() {
            Some(head) if self.is_character(head) => EntityKind::Character,
            _ => EntityKind::Object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub template: String,
}

impl PromptTemplate {
    /// Substitutes `{{text}}` with the JSON-escaped text and any extra
    /// `{{name}}` placeholders with their values.
    pub fn render(&self, text: &str, extra: &[(&str, String)]) -> String {
        let quoted = serde_json::to_string(text).expect("string serializes");
        let mut out = self.template.clone();
        for (name, value) in extra {
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        out.replace("{{text}}", &quoted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub entities: Vec<DreamEntity>,
    pub used_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct EntityExtractor {
    pub template: PromptTemplate,
    pub lexicon: EntityLexicon,
    pub max_entities: usize,
}

impl EntityExtractor {
    pub fn new(template: PromptTemplate, lexicon: EntityLexicon, max_entities: usize) -> Self {
        Self {
            template,
            lexicon,
            max_entities,
        }
    }

    pub fn build_extraction_prompt(&self, text: &str) -> Result<String, ExtractionError> {
        if text.trim().is_empty() {
            return Err(ExtractionError::EmptyText);
        }
        Ok(self
            .template
            .render(text, &[("max_entities", self.max_entities.to_string())]))
    }

    pub async fn extract_entities(
        &self,
        utterance: &Utterance,
        llm: &dyn CompletionClient,
    ) -> Result<ExtractionResult, ExtractionError> {
        let prompt = self.build_extraction_prompt(&utterance.text)?;
        let parsed = match llm.complete(&prompt).await {
            Ok(raw) => self.parse_llm_entities(&raw, utterance.seq),
            Err(err) => {
                tracing::warn!(%err, seq = utterance.seq, "entity extraction endpoint failed");
                Err(ExtractionError::ParseFailure)
            }
        };
        Ok(match parsed {
            Ok(entities) => ExtractionResult {
                entities,
                used_fallback: false,
            },
            Err(_) => ExtractionResult {
                entities: self.fallback_extract(&utterance.text, utterance.seq),
                used_fallback: true,
            },
        })
    }

    /// Uses the first well-formed JSON array of strings anywhere in `raw`.
    pub fn parse_llm_entities(
        &self,
        raw: &str,
        source_seq: u64,
    ) -> Result<Vec<DreamEntity>, ExtractionError> {
        let items = first_string_array(raw).ok_or(ExtractionError::ParseFailure)?;
        let labels = items.iter().filter_map(|s| clean_label(s));
        Ok(self.finish(labels, source_seq))
    }

    /// Maximal runs of non-stopword tokens, trimmed back to their last noun,
    /// in text order.
    pub fn fallback_extract(&self, text: &str, source_seq: u64) -> Vec<DreamEntity> {
        let tokens = tokenize(text);
        let mut labels = Vec::new();
        for run in tokens.split(|t| self.lexicon.stopwords.contains(t)) {
            let Some(last_noun) = run.iter().rposition(|t| self.lexicon.is_noun(t)) else {
                continue;
            };
            let run = &run[..=last_noun];
            let start = run.len().saturating_sub(MAX_LABEL_WORDS);
            labels.push(run[start..].join(" "));
        }
        self.finish(labels.into_iter(), source_seq)
    }

    fn finish(&self, labels: impl Iterator<Item = String>, source_seq: u64) -> Vec<DreamEntity> {
        let mut seen = HashSet::new();
        labels
            .filter(|l| seen.insert(l.to_lowercase()))
            .take(self.max_entities)
            .map(|label| DreamEntity {
                kind: self.lexicon.kind_of(&label),
                label,
                source_seq,
            })
            .collect()
    }
}

/// Lowercase word tokens; apostrophes and hyphens stay inside words.
fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}

fn clean_label(s: &str) -> Option<String> {
    let stripped: String = s.chars().filter(|c| !SENTENCE_PUNCT.contains(c)).collect();
    let words: Vec<&str> = stripped.split_whitespace().take(MAX_LABEL_WORDS).collect();
    (!words.is_empty()).then(|| words.join(" "))
}

fn first_string_array(raw: &str) -> Option<Vec<String>> {
    raw.match_indices('[').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Vec<String>>();
        stream.next()?.ok()
    })
}
