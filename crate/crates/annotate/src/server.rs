use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::error::{AnnotateError, Result};
use crate::store::Store;
use crate::types::{Candidate, ImportReport, Judgment, Side};

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_task(State(store): State<Arc<Store>>, Query(q): Query<NextQuery>) -> Result<Response> {
    Ok(match store.next_task(&q.annotator)? {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(store): State<Arc<Store>>, Json(j): Json<Judgment>) -> Result<Json<serde_json::Value>> {
    store.submit(j)?;
    Ok(Json(json!({ "ok": true })))
}

async fn import(State(store): State<Arc<Store>>, Json(c): Json<Vec<Candidate>>) -> Result<Json<ImportReport>> {
    Ok(Json(store.import(c)?))
}

async fn export(State(store): State<Arc<Store>>) -> Result<Response> {
    let body = store.export_jsonl()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn media(State(store): State<Arc<Store>>, Path((task, side)): Path<(String, String)>) -> Result<Response> {
    let side = match side.as_str() {
        "A" => Side::A,
        "B" => Side::B,
        other => return Err(AnnotateError::Invalid(format!("side {other} is neither A nor B"))),
    };
    let path = store.media(&task, side)?;
    let bytes = tokio::fs::read(&path).await?;
    let ctype = match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => "audio/wav",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], bytes).into_response())
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/tasks/import", post(import))
        .route("/judgments", post(submit))
        .route("/export", get(export))
        .route("/media/{task}/{side}", get(media))
        .with_state(store)
}

/// Serve until the process is stopped.
pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(store)).await?;
    Ok(())
}
