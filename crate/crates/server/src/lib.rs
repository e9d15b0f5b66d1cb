//! HTTP and server-sent-events front end over [`somnia_core::session::Orchestrator`].

pub mod cli;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use somnia_core::config::{AppConfig, UiSettings};
use somnia_core::generation::serialize_cloud;
use somnia_core::session::{Orchestrator, SessionError, SessionEvent};

pub struct AppState {
    pub orchestrator: Orchestrator,
    pub ui: UiSettings,
    pub stems: BTreeMap<String, String>,
    pub crossfade_ms: u64,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator, config: &AppConfig) -> anyhow::Result<Self> {
        Ok(Self {
            orchestrator,
            ui: config.ui.clone(),
            stems: config.stem_manifest()?,
            crossfade_ms: config.crossfade_ms,
        })
    }
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::SessionClosed(_) | SessionError::DuplicateSession(_) => StatusCode::CONFLICT,
            SessionError::EmptyUtterance => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::RateLimited { .. } => StatusCode::TOO_MANY_REQUESTS,
            SessionError::TooManySessions(_) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::Stopped(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut resp = (status, Json(json!({ "error": self.0.to_string() }))).into_response();
        if let SessionError::RateLimited { retry_after_ms } = self.0 {
            let secs = retry_after_ms.div_ceil(1000).max(1);
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/ui-config", get(ui_config))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(close_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/state", get(session_state))
        .route("/clouds/{key}", get(cloud))
        .with_state(state)
}

async fn healthz(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "sessions": s.orchestrator.session_ids().len() }))
}

async fn ui_config(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "tint": s.ui.tint,
        "stt_endpoint": s.ui.stt_endpoint,
        "pause_ms": s.ui.pause_ms,
        "crossfade_ms": s.crossfade_ms,
        "stems": s.stems,
    }))
}

#[derive(Serialize)]
struct Created {
    session_id: String,
}

async fn create_session(State(s): State<Arc<AppState>>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let session_id = s.orchestrator.create_session()?;
    Ok((StatusCode::CREATED, Json(Created { session_id })))
}

#[derive(Deserialize)]
struct UtteranceBody {
    text: String,
}

async fn post_utterance(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<UtteranceBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let events = s.orchestrator.ingest(&id, &body.text).await?;
    Ok(Json(json!({ "events": events })))
}

async fn session_state(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.orchestrator.state(&id).await?).into_response())
}

async fn close_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionEvent>, ApiError> {
    Ok(Json(s.orchestrator.close(&id).await?))
}

async fn cloud(State(s): State<Arc<AppState>>, Path(key): Path<String>) -> Response {
    match s.orchestrator.cloud(&key) {
        Some(c) => (
            [(header::CONTENT_TYPE, "application/octet-stream")],
            serialize_cloud(&c),
        )
            .into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": format!("no cloud {key}") }))).into_response(),
    }
}

#[derive(Deserialize)]
struct Cursor {
    from: Option<u64>,
}

fn sse_event(e: &SessionEvent) -> Event {
    Event::default()
        .id(e.event_seq.to_string())
        .event(e.kind())
        .data(e.to_json_line())
}

/// Backlog from the cursor (`?from=` or `Last-Event-ID`), then live events.
/// The stream ends after `session_closed`, or when this subscriber falls so far
/// behind that events were dropped; clients reconnect with their cursor.
async fn events(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(cursor): Query<Cursor>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|n| n + 1);
    let from = cursor.from.or(last_id).unwrap_or(0);
    let (backlog, rx) = s.orchestrator.subscribe(&id, from).await?;
    let closed = backlog.iter().any(|e| e.kind() == "session_closed");
    let next = backlog.last().map_or(from, |e| e.event_seq + 1);
    let head = stream::iter(backlog.iter().map(sse_event).map(Ok).collect::<Vec<_>>());
    let live = stream::unfold((rx, next, closed), |(mut rx, next, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(e) if e.event_seq < next => continue,
                Ok(e) => {
                    let done = e.kind() == "session_closed";
                    return Some((Ok(sse_event(&e)), (rx, e.event_seq + 1, done)));
                }
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged; closing stream");
                    return None;
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(head.chain(live)).keep_alive(KeepAlive::default()))
}
