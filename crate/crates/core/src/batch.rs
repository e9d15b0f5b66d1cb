//! Batch HVDC-style scoring of transcript files.
//!
//! Each non-blank line of a transcript is one utterance. Per file we report
//! the dominant emotion and social class (most frequent, ties going to the
//! label seen first) and the number of distinct entities.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::model::{collapse_emotion, EmotionLabel, HvdcEmotionClass, SocialClass, Utterance};
use crate::session::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub file: String,
    pub utterances: usize,
    pub dominant_emotion: Option<EmotionLabel>,
    pub hvdc_emotion: Option<HvdcEmotionClass>,
    pub dominant_social: SocialClass,
    pub entity_count: usize,
}

fn dominant<T: Copy + Eq + std::hash::Hash>(items: &[T]) -> Option<T> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for &x in items {
        *counts.entry(x).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    items.iter().copied().find(|x| counts[x] == best)
}

pub async fn score_transcript(pipeline: &Pipeline, file: &str, text: &str) -> ScoreRow {
    let mut emotions = Vec::new();
    let mut socials = Vec::new();
    let mut entities = HashSet::new();
    let lines = text.lines().filter(|l| !l.trim().is_empty());
    for (seq, line) in lines.enumerate() {
        let u = Utterance::new(file, seq as u64, line, 0).expect("blank lines are skipped");
        let (e, s, x) = tokio::join!(
            pipeline.emotion.classify_emotion(&u, pipeline.llm.as_ref()),
            pipeline.social.classify_social(&u, pipeline.embedder.as_ref()),
            pipeline.extractor.extract_entities(&u, pipeline.llm.as_ref()),
        );
        emotions.push(e.label);
        if s.class != SocialClass::None {
            socials.push(s.class);
        }
        if let Ok(x) = x {
            entities.extend(x.entities.into_iter().map(|e| e.label.to_lowercase()));
        }
    }
    let dominant_emotion = dominant(&emotions);
    ScoreRow {
        file: file.to_owned(),
        utterances: emotions.len(),
        dominant_emotion,
        hvdc_emotion: dominant_emotion.map(collapse_emotion),
        dominant_social: dominant(&socials).unwrap_or(SocialClass::None),
        entity_count: entities.len(),
    }
}

/// Scores every `*.txt` file in `dir`, sorted by file name.
pub async fn score_dir(pipeline: &Pipeline, dir: &Path) -> std::io::Result<Vec<ScoreRow>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    let mut rows = Vec::with_capacity(files.len());
    for path in files {
        let text = std::fs::read_to_string(&path)?;
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        rows.push(score_transcript(pipeline, &name, &text).await);
    }
    Ok(rows)
}
