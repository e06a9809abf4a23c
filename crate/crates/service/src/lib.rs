//! Live-session HTTP API over trained MISC models.
//!
//! | method | path | response |
//! |---|---|---|
//! | POST | `/sessions` | `201 {session_id}` |
//! | POST | `/sessions/{id}/utterances` | `{session_id, index, speaker, code, distribution}` |
//! | GET | `/sessions/{id}/forecast?speaker=T&k=3` | `{session_id, speaker, k, top_k, warning}` |
//! | POST | `/sessions/{id}/clone` | `201 {session_id}` |
//! | GET | `/healthz` | `{status, models}` |
//!
//! Errors are `{"error": message}` with status 404 (unknown session), 422
//! (bad speaker or `k`), 409 (forecast on an empty session) or 503 (no model
//! for the requested role and task). Probabilities carry six significant
//! digits.

mod state;
pub mod wire;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use misc_observer::data::Speaker;
use serde_json::json;

pub use state::{read_log, LiveSession, LogRecord, Models, Service, DEFAULT_K};
use wire::{SessionCreated, UtteranceRequest};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{1}")]
    Rejected(StatusCode, String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Rejected(s, _) => *s,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn parse_speaker(s: &str) -> Result<Speaker, ServiceError> {
    s.parse().map_err(ServiceError::Unprocessable)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn create(
    State(svc): State<Arc<Service>>,
) -> Result<(StatusCode, Json<SessionCreated>), ServiceError> {
    let session_id = svc.create()?;
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn clone_session(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
) -> Result<(StatusCode, Json<SessionCreated>), ServiceError> {
    let session_id = svc.clone_session(&id)?;
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn utterance(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Result<Json<UtteranceRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let Json(req) = body.map_err(|r| ServiceError::Rejected(r.status(), r.body_text()))?;
    let speaker = parse_speaker(&req.speaker)?;
    let out = blocking(move || svc.add_utterance(&id, speaker, &req.text)).await?;
    Ok(Json(out).into_response())
}

async fn forecast(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ServiceError> {
    let speaker = params
        .get("speaker")
        .ok_or_else(|| ServiceError::Unprocessable("missing speaker parameter".into()))
        .and_then(|s| parse_speaker(s))?;
    let k = match params.get("k") {
        Some(k) => k
            .parse::<usize>()
            .map_err(|_| ServiceError::Unprocessable(format!("k={k:?} is not a count")))?,
        None => DEFAULT_K.min(speaker.labels().len()),
    };
    let out = blocking(move || svc.forecast(&id, speaker, k)).await?;
    Ok(Json(out).into_response())
}

async fn healthz(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    let models: Vec<String> = svc.models().keys().iter().map(|k| k.to_string()).collect();
    Json(json!({ "status": "ok", "models": models }))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}/utterances", post(utterance))
        .route("/sessions/{id}/forecast", get(forecast))
        .route("/sessions/{id}/clone", post(clone_session))
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, service: Arc<Service>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
