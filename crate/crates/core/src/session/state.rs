//! Session state as a pure fold over [`SessionEvent`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{EmotionResult, SocialResult};
use crate::color::ColorSpec;
use crate::model::{DreamEntity, EmotionLabel, SocialClass};
use crate::soundscape::SoundLayerState;

use super::event::{EventBody, SessionEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Placement {
    pub r0: f64,
    pub dr: f64,
    pub angle_deg: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            r0: 2.0,
            dr: 0.35,
            angle_deg: 137.508,
        }
    }
}

impl Placement {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r0.is_finite() && self.r0 >= 0.0) {
            return Err(format!("placement r0 must be finite and >= 0, got {}", self.r0));
        }
        // A strictly growing radius is what keeps positions pairwise distinct.
        if !(self.dr.is_finite() && self.dr > 0.0) {
            return Err(format!("placement dr must be finite and > 0, got {}", self.dr));
        }
        if !self.angle_deg.is_finite() {
            return Err("placement angle must be finite".into());
        }
        Ok(())
    }

    /// Golden-angle spiral in the floor plane: the k-th element sits at angle
    /// `k * angle_deg`, radius `r0 + k * dr`, height 0.
    pub fn position(&self, k: usize) -> [f64; 3] {
        let k = k as f64;
        let theta = (k * self.angle_deg).to_radians();
        let r = self.r0 + k * self.dr;
        [r * theta.cos(), 0.0, r * theta.sin()]
    }
}

/// Position for the next element spawned into `scene`.
pub fn place_entity(scene: &SceneState, placement: &Placement) -> [f64; 3] {
    placement.position(scene.elements.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneElement {
    pub spawn_id: String,
    pub entity: DreamEntity,
    /// Cache key for `GET /clouds/{key}`.
    pub cloud_ref: String,
    pub position: [f64; 3],
    pub color: ColorSpec,
    pub motion_amplitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub elements: Vec<SceneElement>,
    pub current_emotion: Option<EmotionLabel>,
    pub current_social: Option<SocialClass>,
}

/// A generation job that has started but not yet produced a scene element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSpawn {
    pub source_seq: u64,
    pub entity: DreamEntity,
    pub job_id: String,
    pub cache_key: String,
    pub color: ColorSpec,
    pub motion_amplitude: f64,
}

/// Per-utterance classifier outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub seq: u64,
    pub text: String,
    pub emotion: Option<EmotionResult>,
    pub social: Option<SocialResult>,
    pub entities: Vec<DreamEntity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    /// Number of events folded so far; also the next expected `event_seq`.
    pub event_count: u64,
    pub scene: SceneState,
    pub sound: SoundLayerState,
    pub timeline: Vec<TimelineEntry>,
    pub pending: BTreeMap<String, PendingSpawn>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {event_seq}: {reason}")]
pub struct FoldError {
    pub event_seq: u64,
    pub reason: String,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            ..Self::default()
        }
    }

    pub fn utterance_count(&self) -> u64 {
        self.timeline.len() as u64
    }

    pub fn last_emotion(&self) -> Option<&EmotionResult> {
        self.timeline.iter().rev().find_map(|t| t.emotion.as_ref())
    }

    pub fn last_social(&self) -> Option<&SocialResult> {
        self.timeline.iter().rev().find_map(|t| t.social.as_ref())
    }

    fn entry(&mut self, seq: u64, event_seq: u64) -> Result<&mut TimelineEntry, FoldError> {
        self.timeline
            .iter_mut()
            .rev()
            .find(|t| t.seq == seq)
            .ok_or_else(|| FoldError {
                event_seq,
                reason: format!("references unknown utterance {seq}"),
            })
    }

    /// Folds one event. Rejects sequence gaps, events after close, and scene
    /// updates without a matching generation start.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), FoldError> {
        let fail = |reason: String| FoldError {
            event_seq: event.event_seq,
            reason,
        };
        if event.event_seq != self.event_count {
            return Err(fail(format!(
                "expected event_seq {}, found {} (missing {})",
                self.event_count, event.event_seq, self.event_count
            )));
        }
        if self.event_count == 0 && self.session_id.is_empty() {
            self.session_id = event.session_id.clone();
        } else if event.session_id != self.session_id {
            return Err(fail(format!(
                "belongs to session {:?}, not {:?}",
                event.session_id, self.session_id
            )));
        }
        if self.closed {
            return Err(fail(format!("{} after session_closed", event.kind())));
        }
        let seq = event.event_seq;
        match &event.body {
            EventBody::UtteranceReceived(p) => {
                if p.seq != self.utterance_count() {
                    return Err(fail(format!(
                        "utterance seq {} out of order, expected {}",
                        p.seq,
                        self.utterance_count()
                    )));
                }
                self.timeline.push(TimelineEntry {
                    seq: p.seq,
                    text: p.text.clone(),
                    emotion: None,
                    social: None,
                    entities: Vec::new(),
                });
            }
            EventBody::EmotionClassified(p) => {
                self.entry(p.source_seq, seq)?.emotion = Some(EmotionResult {
                    label: p.label,
                    used_fallback: p.used_fallback,
                });
                self.scene.current_emotion = Some(p.label);
            }
            EventBody::SocialClassified(p) => {
                self.entry(p.source_seq, seq)?.social = Some(SocialResult {
                    class: p.class,
                    score: p.score,
                    runner_up: p.runner_up.clone(),
                    used_fallback: p.used_fallback,
                });
                self.scene.current_social = Some(p.class);
            }
            EventBody::SoundState(p) => {
                self.entry(p.source_seq, seq)?;
                self.sound = p.layers.clone();
            }
            EventBody::EntitiesExtracted(p) => {
                self.entry(p.source_seq, seq)?.entities = p.entities.clone();
            }
            EventBody::GenerationStarted(p) => {
                self.entry(p.source_seq, seq)?;
                let spawn = PendingSpawn {
                    source_seq: p.source_seq,
                    entity: p.entity.clone(),
                    job_id: p.job_id.clone(),
                    cache_key: p.cache_key.clone(),
                    color: p.color.clone(),
                    motion_amplitude: p.motion_amplitude,
                };
                if self.pending.insert(p.spawn_id.clone(), spawn).is_some()
                    || self.scene.elements.iter().any(|e| e.spawn_id == p.spawn_id)
                {
                    return Err(fail(format!("spawn {} started twice", p.spawn_id)));
                }
            }
            EventBody::SceneUpdate(p) => {
                let id = &p.element.spawn_id;
                let Some(spawn) = self.pending.remove(id) else {
                    return Err(fail(format!("dangling scene_update for spawn {id}")));
                };
                if spawn.cache_key != p.element.cloud_ref {
                    return Err(fail(format!(
                        "scene_update for spawn {id} references cloud {} but generation started {}",
                        p.element.cloud_ref, spawn.cache_key
                    )));
                }
                self.scene.elements.push(p.element.clone());
            }
            EventBody::GenerationFailed(p) => {
                if let Some(id) = &p.spawn_id {
                    if self.pending.remove(id).is_none() {
                        return Err(fail(format!("dangling generation_failed for spawn {id}")));
                    }
                }
            }
            EventBody::SessionClosed(_) => self.closed = true,
        }
        self.event_count += 1;
        Ok(())
    }
}
