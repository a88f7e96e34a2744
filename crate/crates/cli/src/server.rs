//! `GET /api/tasks/next?annotator=ID`, `POST /api/tasks/{id}/judgment`,
//! `GET /api/stats`, `GET /api/export`, and static files for every other
//! path.

use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use docrepair::pipeline::annotation::{AnnotationError, Choice, TaskStore};
use serde::Deserialize;
use serde_json::json;

struct AppState {
    store: Mutex<TaskStore>,
    static_dir: Option<PathBuf>,
}

type Shared = Arc<AppState>;

pub fn router(store: TaskStore, static_dir: Option<PathBuf>) -> Router {
    let state = Arc::new(AppState {
        store: Mutex::new(store),
        static_dir,
    });
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{id}/judgment", post(submit))
        .route("/api/stats", get(stats))
        .route("/api/export", get(export))
        .fallback(static_file)
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(State(s): State<Shared>, Query(q): Query<NextQuery>) -> Response {
    let Some(annotator) = q.annotator.filter(|a| !a.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "missing annotator");
    };
    let mut store = s.store.lock().expect("store lock");
    match store.next_for(&annotator) {
        Some(t) => Json(t.view()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

#[derive(Deserialize)]
struct Submission {
    annotator: String,
    choice: Choice,
}

async fn submit(State(s): State<Shared>, Path(id): Path<String>, body: Result<Json<Submission>, JsonRejection>) -> Response {
    let Json(sub) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut store = s.store.lock().expect("store lock");
    match store.submit(&id, &sub.annotator, sub.choice, now) {
        Ok(_) => (StatusCode::CREATED, Json(json!({ "task_id": id, "recorded": true }))).into_response(),
        Err(e @ AnnotationError::UnknownTask(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ AnnotationError::Duplicate(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e @ AnnotationError::BadRequest(_)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn stats(State(s): State<Shared>) -> Response {
    Json(s.store.lock().expect("store lock").stats()).into_response()
}

async fn export(State(s): State<Shared>) -> Response {
    Json(s.store.lock().expect("store lock").export()).into_response()
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn static_file(State(s): State<Shared>, uri: Uri) -> Response {
    let Some(root) = &s.static_dir else {
        return error(StatusCode::NOT_FOUND, "not found");
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return error(StatusCode::NOT_FOUND, "not found");
    }
    let path = root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "not found"),
    }
}
