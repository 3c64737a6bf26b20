//! HTTP surface of the CHOIR service.
//!
//! Chat clients post [`ChatEvent`](choir_core::gateway::ChatEvent) JSON to
//! `/v1/events` and read sequenced actions from `/v1/actions` as
//! newline-delimited JSON.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use choir_core::gateway::{ErrorInfo, Service};
use choir_core::repo::RepoError;
use choir_core::Uuid;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::watch;

/// How often idle update flows are checked for expiry.
pub const SWEEP_INTERVAL: Duration = Duration::from_secs(60);

#[derive(Clone)]
pub struct AppState {
    service: Arc<Service>,
    /// Carries the latest action sequence number to streaming readers.
    seq: watch::Sender<u64>,
}

impl AppState {
    pub fn new(service: Arc<Service>) -> Self {
        let (seq, _) = watch::channel(service.last_seq());
        Self { service, seq }
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    fn publish(&self) {
        self.seq.send_replace(self.service.last_seq());
    }

    /// Runs one expiry pass as of `now` and wakes stream readers.
    pub async fn sweep(&self, now: chrono::DateTime<chrono::Utc>) {
        let service = self.service.clone();
        match tokio::task::spawn_blocking(move || service.sweep(now)).await {
            Ok(Ok(expired)) if !expired.is_empty() => {
                tracing::info!(count = expired.len(), "expired idle flows");
                self.publish();
            }
            Ok(Ok(_)) => {}
            Ok(Err(e)) => tracing::error!(error = %e, "sweep failed"),
            Err(e) => tracing::error!(error = %e, "sweep task panicked"),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/events", post(post_event))
        .route("/v1/actions", get(stream_actions))
        .route("/v1/documents", get(list_documents))
        .route("/v1/documents/{*path}", get(document_view))
        .route("/v1/flows/{id}", get(get_flow))
        .with_state(state)
}

/// Sweeps on a fixed interval until the runtime shuts down.
pub fn spawn_sweeper(state: AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.tick().await;
        loop {
            tick.tick().await;
            state.sweep(chrono::Utc::now()).await;
        }
    })
}

fn error_response(status: StatusCode, info: ErrorInfo) -> Response {
    (status, Json(json!({ "error": info }))).into_response()
}

fn not_found(message: String) -> Response {
    error_response(
        StatusCode::NOT_FOUND,
        ErrorInfo {
            code: "NotFound".into(),
            message,
            retryable: false,
        },
    )
}

fn status_of(info: &ErrorInfo) -> StatusCode {
    StatusCode::from_u16(info.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

fn repo_error(e: RepoError) -> Response {
    match e {
        RepoError::DocumentNotFound(_) | RepoError::RevisionNotFound(_) => not_found(e.to_string()),
        RepoError::InvalidPath { .. } => error_response(
            StatusCode::BAD_REQUEST,
            ErrorInfo {
                code: "InvalidPath".into(),
                message: e.to_string(),
                retryable: false,
            },
        ),
        other => error_response(
            StatusCode::SERVICE_UNAVAILABLE,
            ErrorInfo {
                code: "RepositoryError".into(),
                message: other.to_string(),
                retryable: true,
            },
        ),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("blocking task panicked")
}

async fn healthz(State(state): State<AppState>) -> impl IntoResponse {
    Json(json!({ "status": "ok", "last_seq": *state.seq.borrow() }))
}

async fn post_event(State(state): State<AppState>, body: Bytes) -> Response {
    let service = state.service.clone();
    let result = blocking(move || service.ingest_json(&body)).await;
    match result {
        Ok(ack) => {
            state.publish();
            let status = match &ack.error {
                Some(info) if !ack.accepted => status_of(info),
                _ => StatusCode::OK,
            };
            (status, Json(ack)).into_response()
        }
        Err(e) => {
            let info = e.info();
            tracing::warn!(code = %info.code, message = %info.message, "event refused");
            error_response(status_of(&info), info)
        }
    }
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    since: u64,
    /// Keep the response open for new actions; `false` returns the backlog only.
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

struct Cursor {
    state: AppState,
    rx: watch::Receiver<u64>,
    since: u64,
    follow: bool,
    done: bool,
}

async fn next_batch(mut c: Cursor) -> Option<(Result<Bytes, Infallible>, Cursor)> {
    loop {
        if c.done {
            return None;
        }
        // Mark the current value seen before reading so no wakeup is lost.
        c.rx.borrow_and_update();
        let service = c.state.service.clone();
        let since = c.since;
        let batch = blocking(move || service.actions_since(since)).await;
        if let Some(last) = batch.last() {
            c.since = last.seq;
            let mut out = Vec::new();
            for a in &batch {
                serde_json::to_writer(&mut out, a).expect("actions serialize");
                out.push(b'\n');
            }
            return Some((Ok(Bytes::from(out)), c));
        }
        if !c.follow || c.rx.changed().await.is_err() {
            c.done = true;
        }
    }
}

async fn stream_actions(State(state): State<AppState>, Query(q): Query<StreamQuery>) -> Response {
    let cursor = Cursor {
        rx: state.seq.subscribe(),
        state,
        since: q.since,
        follow: q.follow,
        done: false,
    };
    let body = Body::from_stream(futures::stream::unfold(cursor, next_batch));
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn list_documents(State(state): State<AppState>) -> Response {
    let service = state.service.clone();
    match blocking(move || service.documents()).await {
        Ok(listing) => Json(listing).into_response(),
        Err(e) => repo_error(e),
    }
}

async fn document_view(State(state): State<AppState>, Path(path): Path<String>) -> Response {
    let service = state.service.clone();
    if let Some(doc) = path.strip_suffix("/history") {
        let doc = doc.to_string();
        let lookup = doc.clone();
        return match blocking(move || service.history(&lookup)).await {
            Ok(revisions) => Json(json!({ "path": doc, "revisions": revisions })).into_response(),
            Err(e) => repo_error(e),
        };
    }
    match blocking(move || service.document(&path)).await {
        Ok(doc) => Json(doc).into_response(),
        Err(e) => repo_error(e),
    }
}

async fn get_flow(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Ok(flow_id) = Uuid::parse_str(&id) else {
        return error_response(
            StatusCode::BAD_REQUEST,
            ErrorInfo {
                code: "Malformed".into(),
                message: format!("not a flow id: {id}"),
                retryable: false,
            },
        );
    };
    match state.service.flow(flow_id) {
        Some(flow) => {
            let proposal = flow.proposal.as_ref().and_then(|p| state.service.proposal(p.proposal_id));
            let discussion = flow.discussion_id.as_deref().and_then(|d| state.service.discussion(d));
            Json(json!({ "flow": flow, "proposal": proposal, "discussion": discussion })).into_response()
        }
        None => not_found(format!("unknown flow {flow_id}")),
    }
}
