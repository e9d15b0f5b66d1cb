//! Session registry and the per-session actor that owns all state mutation.
//!
//! Every session runs as one task draining an mpsc mailbox. Utterances and
//! generation completions both arrive through that mailbox, so events for a
//! session are produced strictly one at a time and in order. Subscribers get a
//! backlog snapshot and a broadcast receiver taken atomically on the actor.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot};

use super::event::*;
use super::log::EventLog;
use super::state::{Placement, SceneElement, SessionState};
use crate::affect::{EmotionClassifier, SocialClassifier};
use crate::clients::{CompletionClient, Embedder};
use crate::clock::Clock;
use crate::color::ColorMap;
use crate::extraction::EntityExtractor;
use crate::generation::{GenError, GenerationClient, JobState, PointCloud};
use crate::model::{collapse_emotion, Timestamp, Utterance};
use crate::soundscape::Soundscape;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("rate limited, retry in {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("session limit of {0} reached")]
    TooManySessions(usize),
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("session {0} stopped unexpectedly")]
    Stopped(String),
}

/// Everything the analysis steps need, shared by all sessions.
pub struct Pipeline {
    pub extractor: EntityExtractor,
    pub emotion: EmotionClassifier,
    pub social: SocialClassifier,
    pub llm: Arc<dyn CompletionClient>,
    pub embedder: Arc<dyn Embedder>,
    pub colors: ColorMap,
    pub soundscape: Soundscape,
    pub generation: GenerationClient,
    pub template_versions: BTreeMap<String, String>,
}

fn default_max_sessions() -> usize {
    8
}
fn default_min_interval() -> u64 {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    #[serde(default = "default_max_sessions")]
    pub max_sessions: usize,
    /// Minimum spacing between accepted utterances of one session.
    #[serde(default = "default_min_interval")]
    pub min_utterance_interval_ms: u64,
    /// One `<session_id>.jsonl` per session when set.
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
    #[serde(default)]
    pub placement: Placement,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            max_sessions: default_max_sessions(),
            min_utterance_interval_ms: default_min_interval(),
            log_dir: None,
            placement: Placement::default(),
        }
    }
}

type Reply<T> = oneshot::Sender<Result<T, SessionError>>;

enum Command {
    Ingest(String, Reply<Vec<SessionEvent>>),
    GenerationDone { spawn_id: String, outcome: JobState },
    Close(Reply<SessionEvent>),
    State(oneshot::Sender<SessionState>),
    Subscribe(u64, oneshot::Sender<(Vec<SessionEvent>, broadcast::Receiver<SessionEvent>)>),
    WaitIdle(oneshot::Sender<()>),
}

#[derive(Clone)]
struct SessionHandle {
    tx: mpsc::UnboundedSender<Command>,
    open: Arc<AtomicBool>,
}

pub struct Orchestrator {
    pipeline: Arc<Pipeline>,
    clock: Arc<dyn Clock>,
    config: OrchestratorConfig,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

impl Orchestrator {
    pub fn new(pipeline: Arc<Pipeline>, clock: Arc<dyn Clock>, config: OrchestratorConfig) -> Self {
        Self {
            pipeline,
            clock,
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn create_session(&self) -> Result<String, SessionError> {
        let id = uuid::Uuid::new_v4().to_string();
        self.create_session_with_id(&id)?;
        Ok(id)
    }

    /// Creates a session with a caller-chosen id (deterministic tests, fixtures).
    pub fn create_session_with_id(&self, id: &str) -> Result<(), SessionError> {
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.contains_key(id) {
            return Err(SessionError::DuplicateSession(id.to_owned()));
        }
        let open = sessions
            .values()
            .filter(|h| h.open.load(Ordering::SeqCst))
            .count();
        if open >= self.config.max_sessions {
            return Err(SessionError::TooManySessions(self.config.max_sessions));
        }
        let log = self.config.log_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("{id}.jsonl"));
            EventLog::create(&path)
                .inspect_err(|err| tracing::error!(%err, path = %path.display(), "cannot open event log"))
                .ok()
        });
        let (tx, rx) = mpsc::unbounded_channel();
        let open = Arc::new(AtomicBool::new(true));
        let (events_tx, _) = broadcast::channel(1024);
        let actor = Actor {
            id: id.to_owned(),
            pipeline: self.pipeline.clone(),
            clock: self.clock.clone(),
            min_interval: self.config.min_utterance_interval_ms,
            placement: self.config.placement,
            state: SessionState::new(id),
            events: Vec::new(),
            log,
            events_tx,
            self_tx: tx.downgrade(),
            idle_waiters: Vec::new(),
            last_accepted: None,
            open: open.clone(),
        };
        tokio::spawn(actor.run(rx));
        sessions.insert(id.to_owned(), SessionHandle { tx, open });
        tracing::info!(session = id, "session created");
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn handle(&self, id: &str) -> Result<SessionHandle, SessionError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    async fn call<T>(
        &self,
        id: &str,
        make: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, SessionError> {
        let handle = self.handle(id)?;
        let (tx, rx) = oneshot::channel();
        handle
            .tx
            .send(make(tx))
            .map_err(|_| SessionError::Stopped(id.to_owned()))?;
        rx.await.map_err(|_| SessionError::Stopped(id.to_owned()))
    }

    /// Runs the synchronous part of the pipeline for one utterance and returns
    /// its events, `utterance_received` through the last `generation_started`.
    /// Scene updates follow later on the session's event stream.
    pub async fn ingest(&self, id: &str, text: &str) -> Result<Vec<SessionEvent>, SessionError> {
        let text = text.to_owned();
        self.call(id, |tx| Command::Ingest(text, tx)).await?
    }

    pub async fn close(&self, id: &str) -> Result<SessionEvent, SessionError> {
        self.call(id, Command::Close).await?
    }

    pub async fn state(&self, id: &str) -> Result<SessionState, SessionError> {
        self.call(id, Command::State).await
    }

    /// Events with `event_seq >= from`, plus a receiver for everything after.
    pub async fn subscribe(
        &self,
        id: &str,
        from: u64,
    ) -> Result<(Vec<SessionEvent>, broadcast::Receiver<SessionEvent>), SessionError> {
        self.call(id, |tx| Command::Subscribe(from, tx)).await
    }

    pub async fn events(&self, id: &str) -> Result<Vec<SessionEvent>, SessionError> {
        Ok(self.subscribe(id, 0).await?.0)
    }

    /// Resolves once the session has no generation jobs outstanding.
    pub async fn wait_idle(&self, id: &str) -> Result<(), SessionError> {
        self.call(id, Command::WaitIdle).await
    }

    pub fn cloud(&self, cache_key: &str) -> Option<Arc<PointCloud>> {
        self.pipeline.generation.get_cached(cache_key)
    }
}

struct Actor {
    id: String,
    pipeline: Arc<Pipeline>,
    clock: Arc<dyn Clock>,
    min_interval: u64,
    placement: Placement,
    state: SessionState,
    events: Vec<SessionEvent>,
    log: Option<EventLog>,
    events_tx: broadcast::Sender<SessionEvent>,
    /// Weak so that an abandoned session can shut down.
    self_tx: mpsc::WeakUnboundedSender<Command>,
    idle_waiters: Vec<oneshot::Sender<()>>,
    last_accepted: Option<Timestamp>,
    open: Arc<AtomicBool>,
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            match cmd {
                Command::Ingest(text, reply) => {
                    let _ = reply.send(self.ingest(&text).await);
                }
                Command::GenerationDone { spawn_id, outcome } => self.generation_done(spawn_id, outcome),
                Command::Close(reply) => {
                    let _ = reply.send(self.close());
                }
                Command::State(reply) => {
                    let _ = reply.send(self.state.clone());
                }
                Command::Subscribe(from, reply) => {
                    let backlog = self.events.iter().filter(|e| e.event_seq >= from).cloned().collect();
                    let _ = reply.send((backlog, self.events_tx.subscribe()));
                }
                Command::WaitIdle(reply) => {
                    if self.is_idle() {
                        let _ = reply.send(());
                    } else {
                        self.idle_waiters.push(reply);
                    }
                }
            }
            if self.is_idle() {
                for w in self.idle_waiters.drain(..) {
                    let _ = w.send(());
                }
            }
        }
        tracing::debug!(session = %self.id, "session actor stopped");
    }

    fn is_idle(&self) -> bool {
        self.state.closed || self.state.pending.is_empty()
    }

    fn emit(&mut self, body: EventBody) -> SessionEvent {
        let event = SessionEvent {
            session_id: self.id.clone(),
            event_seq: self.events.len() as u64,
            at: self.clock.now_ms(),
            body,
            template_versions: self.pipeline.template_versions.clone(),
        };
        // The actor only builds events its own fold accepts.
        if let Err(err) = self.state.apply(&event) {
            panic!("session {} produced an event its fold rejects: {err}", self.id);
        }
        if let Some(log) = &mut self.log {
            if let Err(err) = log.append(&event) {
                tracing::error!(%err, session = %self.id, "event log write failed");
            }
        }
        let _ = self.events_tx.send(event.clone());
        self.events.push(event.clone());
        event
    }

    async fn ingest(&mut self, text: &str) -> Result<Vec<SessionEvent>, SessionError> {
        if self.state.closed {
            return Err(SessionError::SessionClosed(self.id.clone()));
        }
        let now = self.clock.now_ms();
        let seq = self.state.utterance_count();
        let utterance = Utterance::new(self.id.clone(), seq, text, now).map_err(|_| SessionError::EmptyUtterance)?;
        if let Some(last) = self.last_accepted {
            let elapsed = now.saturating_sub(last);
            if elapsed < self.min_interval {
                return Err(SessionError::RateLimited {
                    retry_after_ms: self.min_interval - elapsed,
                });
            }
        }
        self.last_accepted = Some(now);

        let pipeline = self.pipeline.clone();
        let mut burst = vec![self.emit(EventBody::UtteranceReceived(UtteranceReceived {
            seq,
            text: utterance.text.clone(),
        }))];

        let (emotion, social, extraction) = tokio::join!(
            pipeline.emotion.classify_emotion(&utterance, pipeline.llm.as_ref()),
            pipeline.social.classify_social(&utterance, pipeline.embedder.as_ref()),
            pipeline.extractor.extract_entities(&utterance, pipeline.llm.as_ref()),
        );

        let color = pipeline.colors.emotion_to_color(emotion.label);
        let motion_amplitude = pipeline.colors.motion_amplitude(emotion.label);
        burst.push(self.emit(EventBody::EmotionClassified(EmotionClassified {
            source_seq: seq,
            label: emotion.label,
            hvdc_class: collapse_emotion(emotion.label),
            used_fallback: emotion.used_fallback,
            color: color.clone(),
            valence_arousal: pipeline.colors.emotion_to_va(emotion.label),
            motion_amplitude,
        })));
        burst.push(self.emit(EventBody::SocialClassified(SocialClassified {
            source_seq: seq,
            class: social.class,
            score: social.score,
            runner_up: social.runner_up.clone(),
            used_fallback: social.used_fallback,
        })));

        let sc = &pipeline.soundscape;
        let layers = sc.apply_social(&sc.apply_emotion(&self.state.sound, emotion.label, now), social.class, now);
        let targets = sc.render_mix(&layers, sc.settled_at(&layers));
        burst.push(self.emit(EventBody::SoundState(SoundStatePayload {
            source_seq: seq,
            crossfade_ms: sc.crossfade_ms,
            layers,
            targets,
        })));

        let (entities, used_fallback) = match extraction {
            Ok(r) => (r.entities, r.used_fallback),
            Err(err) => {
                tracing::warn!(%err, session = %self.id, seq, "entity extraction failed");
                (Vec::new(), true)
            }
        };
        burst.push(self.emit(EventBody::EntitiesExtracted(EntitiesExtracted {
            source_seq: seq,
            entities: entities.clone(),
            used_fallback,
        })));

        let mut waits = Vec::new();
        for (i, entity) in entities.into_iter().enumerate() {
            let spawn_id = format!("{seq}.{i}");
            match pipeline.generation.request_cloud(&entity.label) {
                Ok(job) => {
                    burst.push(self.emit(EventBody::GenerationStarted(GenerationStarted {
                        source_seq: seq,
                        spawn_id: spawn_id.clone(),
                        entity,
                        job_id: job.job_id.clone(),
                        cache_key: job.cache_key.clone(),
                        cache_hit: job.cache_hit,
                        color: color.clone(),
                        motion_amplitude,
                    })));
                    waits.push((spawn_id, job));
                }
                Err(err) => {
                    let failure = match err {
                        GenError::QueueFull { .. } => FailureKind::QueueFull,
                        _ => FailureKind::ServiceError,
                    };
                    tracing::warn!(%err, session = %self.id, spawn = %spawn_id, "entity dropped");
                    burst.push(self.emit(EventBody::GenerationFailed(GenerationFailed {
                        source_seq: seq,
                        spawn_id: None,
                        entity,
                        failure,
                        reason: err.to_string(),
                    })));
                }
            }
        }
        // One waiter per burst reports completions in spawn order, so a cache
        // hit never overtakes an earlier entity of the same utterance.
        if let (false, Some(tx)) = (waits.is_empty(), self.self_tx.upgrade()) {
            tokio::spawn(async move {
                for (spawn_id, job) in waits {
                    let outcome = job.wait().await;
                    if tx.send(Command::GenerationDone { spawn_id, outcome }).is_err() {
                        break;
                    }
                }
            });
        }
        Ok(burst)
    }

    fn generation_done(&mut self, spawn_id: String, outcome: JobState) {
        if self.state.closed {
            return;
        }
        let Some(spawn) = self.state.pending.get(&spawn_id).cloned() else {
            tracing::warn!(session = %self.id, spawn = %spawn_id, "completion for unknown spawn");
            return;
        };
        let body = match outcome {
            JobState::Done(_) => EventBody::SceneUpdate(SceneUpdate {
                source_seq: spawn.source_seq,
                job_id: spawn.job_id,
                element: SceneElement {
                    position: self.placement.position(self.state.scene.elements.len()),
                    spawn_id,
                    entity: spawn.entity,
                    cloud_ref: spawn.cache_key,
                    color: spawn.color,
                    motion_amplitude: spawn.motion_amplitude,
                },
            }),
            other => {
                let (failure, reason) = match other {
                    JobState::TimedOut => (FailureKind::TimedOut, "generation timed out".to_owned()),
                    JobState::Failed(r) => (FailureKind::ServiceError, r),
                    s => (FailureKind::ServiceError, format!("unexpected job state {}", s.name())),
                };
                EventBody::GenerationFailed(GenerationFailed {
                    source_seq: spawn.source_seq,
                    spawn_id: Some(spawn_id),
                    entity: spawn.entity,
                    failure,
                    reason,
                })
            }
        };
        self.emit(body);
    }

    fn close(&mut self) -> Result<SessionEvent, SessionError> {
        if self.state.closed {
            return Err(SessionError::SessionClosed(self.id.clone()));
        }
        let event = self.emit(EventBody::SessionClosed(SessionClosed {
            utterances: self.state.utterance_count(),
            elements: self.state.scene.elements.len(),
        }));
        if let Some(log) = &mut self.log {
            if let Err(err) = log.close() {
                tracing::error!(%err, session = %self.id, "event log fsync failed");
            }
        }
        self.open.store(false, Ordering::SeqCst);
        tracing::info!(session = %self.id, "session closed");
        Ok(event)
    }
}
