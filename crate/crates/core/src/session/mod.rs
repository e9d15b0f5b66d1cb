//! Sessions: event types, the state fold, the JSONL log, and the orchestrator.

pub mod event;
pub mod log;
pub mod orchestrator;
pub mod state;

pub use event::{EventBody, FailureKind, SessionEvent};
pub use log::{canonicalize_log, export_mix, fold_events, read_events, replay, EventLog, MixSample, ReplayError};
pub use orchestrator::{Orchestrator, OrchestratorConfig, Pipeline, SessionError};
pub use state::{place_entity, Placement, SceneElement, SceneState, SessionState, TimelineEntry};
