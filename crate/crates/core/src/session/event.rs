//! Session events. Each event carries everything the fold needs, so a session's
//! state is recoverable from its log alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::affect::RunnerUp;
use crate::color::ColorSpec;
use crate::model::{DreamEntity, EmotionLabel, HvdcEmotionClass, SocialClass, Timestamp, ValenceArousal};
use crate::soundscape::{LayerMix, SoundLayerState};

use super::state::SceneElement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub event_seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
    pub template_versions: BTreeMap<String, String>,
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    /// The utterance this event belongs to, if any.
    pub fn source_seq(&self) -> Option<u64> {
        match &self.body {
            EventBody::UtteranceReceived(p) => Some(p.seq),
            EventBody::EmotionClassified(p) => Some(p.source_seq),
            EventBody::SocialClassified(p) => Some(p.source_seq),
            EventBody::SoundState(p) => Some(p.source_seq),
            EventBody::EntitiesExtracted(p) => Some(p.source_seq),
            EventBody::GenerationStarted(p) => Some(p.source_seq),
            EventBody::SceneUpdate(p) => Some(p.source_seq),
            EventBody::GenerationFailed(p) => Some(p.source_seq),
            EventBody::SessionClosed(_) => None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("session events always serialize")
    }
}

/// Serialized as `"kind": "<snake_case>", "payload": {..}` next to the
/// envelope fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    UtteranceReceived(UtteranceReceived),
    EmotionClassified(EmotionClassified),
    SocialClassified(SocialClassified),
    SoundState(SoundStatePayload),
    EntitiesExtracted(EntitiesExtracted),
    GenerationStarted(GenerationStarted),
    SceneUpdate(SceneUpdate),
    GenerationFailed(GenerationFailed),
    SessionClosed(SessionClosed),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::UtteranceReceived(_) => "utterance_received",
            EventBody::EmotionClassified(_) => "emotion_classified",
            EventBody::SocialClassified(_) => "social_classified",
            EventBody::SoundState(_) => "sound_state",
            EventBody::EntitiesExtracted(_) => "entities_extracted",
            EventBody::GenerationStarted(_) => "generation_started",
            EventBody::SceneUpdate(_) => "scene_update",
            EventBody::GenerationFailed(_) => "generation_failed",
            EventBody::SessionClosed(_) => "session_closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReceived {
    pub seq: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionClassified {
    pub source_seq: u64,
    pub label: EmotionLabel,
    pub hvdc_class: HvdcEmotionClass,
    pub used_fallback: bool,
    pub color: ColorSpec,
    pub valence_arousal: ValenceArousal,
    pub motion_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialClassified {
    pub source_seq: u64,
    pub class: SocialClass,
    pub score: f64,
    pub runner_up: Option<RunnerUp>,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundStatePayload {
    pub source_seq: u64,
    pub crossfade_ms: u64,
    /// Full layer state after this utterance; `render_mix` over it gives the
    /// gains at any later time.
    pub layers: SoundLayerState,
    /// Steady-state gains once every ramp has finished.
    pub targets: LayerMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitiesExtracted {
    pub source_seq: u64,
    pub entities: Vec<DreamEntity>,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStarted {
    pub source_seq: u64,
    /// `<source_seq>.<entity index>`, unique within the session.
    pub spawn_id: String,
    pub entity: DreamEntity,
    pub job_id: String,
    pub cache_key: String,
    pub cache_hit: bool,
    /// Frozen at spawn: the emotion of the originating utterance.
    pub color: ColorSpec,
    pub motion_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneUpdate {
    pub source_seq: u64,
    pub job_id: String,
    pub element: SceneElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    QueueFull,
    TimedOut,
    ServiceError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailed {
    pub source_seq: u64,
    /// Absent when the job was never admitted (queue full).
    pub spawn_id: Option<String>,
    pub entity: DreamEntity,
    pub failure: FailureKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionClosed {
    pub utterances: u64,
    pub elements: usize,
}
