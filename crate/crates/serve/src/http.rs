use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::error::{ServeError, ServeResult};
use crate::service::{History, Mode, SearchResult, Service, VideoList};

type AppState = Arc<Service>;

#[derive(Deserialize)]
struct SearchParams {
    q: Option<String>,
}

#[derive(Deserialize)]
struct VideoParams {
    concept: Option<String>,
    #[serde(default)]
    mode: Mode,
    student: Option<String>,
}

#[derive(Deserialize)]
struct WatchBody {
    student: String,
    video: String,
}

/// Runs CPU-bound ranking off the async workers.
async fn blocking<T, F>(f: F) -> ServeResult<T>
where
    F: FnOnce() -> ServeResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServeError::Internal(e.to_string()))?
}

async fn search(State(svc): State<AppState>, Query(p): Query<SearchParams>) -> ServeResult<Json<Vec<SearchResult>>> {
    let q = p.q.ok_or_else(|| ServeError::BadRequest("missing query parameter q".into()))?;
    blocking(move || Ok(Json(svc.search(&q)))).await
}

async fn videos(State(svc): State<AppState>, Query(p): Query<VideoParams>) -> ServeResult<Json<VideoList>> {
    let concept = p
        .concept
        .ok_or_else(|| ServeError::BadRequest("missing query parameter concept".into()))?;
    blocking(move || svc.videos(&concept, p.mode, p.student.as_deref()).map(Json)).await
}

async fn watch(State(svc): State<AppState>, Json(body): Json<WatchBody>) -> ServeResult<Json<Value>> {
    let n = blocking(move || svc.record_watch(&body.student, &body.video)).await?;
    Ok(Json(json!({ "history_length": n })))
}

async fn history(State(svc): State<AppState>, Path(id): Path<String>) -> ServeResult<Json<History>> {
    svc.history(&id).map(Json)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/search", get(search))
        .route("/api/videos", get(videos))
        .route("/api/watch", post(watch))
        .route("/api/student/{id}/history", get(history))
        .layer(CorsLayer::permissive())
        .with_state(service)
}
