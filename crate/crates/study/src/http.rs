//! JSON API consumed by the review client.
//!
//! | route | response |
//! |---|---|
//! | `GET /api/reviewers/{id}/next` | next blinded item or completion |
//! | `GET /api/items/{label}/he`, `.../sox10` | PNG bytes |
//! | `POST /api/responses` | stored response (201) |
//! | `GET /api/stats` | study statistics; needs `x-admin-token` |
//! | `GET /api/progress/{reviewer}` | answered/total |
//!
//! Errors are `{"code": ..., "message": ...}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::Serialize;
use tower_http::services::ServeDir;

use crate::error::StudyError;
use crate::service::{ImageKind, Study};
use crate::store::ResponseSubmission;

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
struct AppState {
    study: Arc<Study>,
    admin_token: Arc<str>,
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    status: StatusCode,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            status,
        }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match &e {
            StudyError::InvalidResponse(_) => StatusCode::BAD_REQUEST,
            StudyError::UnknownReviewer(_)
            | StudyError::UnknownPosition(_)
            | StudyError::UnknownItem(_) => StatusCode::NOT_FOUND,
            StudyError::Duplicate { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            warn!("request failed: {e}");
        }
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn next_item(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.study.next_item(&id)?))
}

async fn progress(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.study.progress(&id)?))
}

async fn image(s: AppState, label: String, kind: ImageKind) -> ApiResult<Response> {
    let study = s.study.clone();
    let png = tokio::task::spawn_blocking(move || study.item_image(&label, kind))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "no-store"),
        ],
        png,
    )
        .into_response())
}

async fn he_image(State(s): State<AppState>, Path(label): Path<String>) -> ApiResult<Response> {
    image(s, label, ImageKind::He).await
}

async fn sox10_image(State(s): State<AppState>, Path(label): Path<String>) -> ApiResult<Response> {
    image(s, label, ImageKind::Sox10).await
}

async fn post_response(State(s): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let submission: ResponseSubmission = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", e.to_string()))?;
    let study = s.study.clone();
    let stored = tokio::task::spawn_blocking(move || study.record_response(submission))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn stats(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    let ok = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|t| constant_time_eq(t.as_bytes(), s.admin_token.as_bytes()));
    if !ok {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong admin token",
        ));
    }
    Ok(Json(s.study.stats()?))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// Router for the study API, optionally serving client assets from
/// `static_dir` for any non-API path.
pub fn router(study: Arc<Study>, admin_token: &str, static_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        study,
        admin_token: Arc::from(admin_token),
    };
    let api = Router::new()
        .route("/api/reviewers/{id}/next", get(next_item))
        .route("/api/items/{label}/he", get(he_image))
        .route("/api/items/{label}/sox10", get(sox10_image))
        .route("/api/responses", post(post_response))
        .route("/api/stats", get(stats))
        .route("/api/progress/{reviewer}", get(progress))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

/// Serve until ctrl-c.
pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(
        "study server listening on http://{}",
        listener.local_addr()?
    );
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
