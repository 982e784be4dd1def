use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use serde_json::Value;
use tower_http::services::ServeDir;

use crate::ops::{parse_body, parse_required, ApiError, ApiResult, Service};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

type Reply = ApiResult<Json<Value>>;

async fn create(State(svc): State<Service>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let view = svc.create_session(parse_body(&body)?).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list(State(svc): State<Service>) -> Json<Value> {
    Json(svc.list_sessions())
}

async fn show(State(svc): State<Service>, Path(id): Path<String>) -> Reply {
    svc.get_session(&id).map(Json)
}

async fn sketch(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> Reply {
    svc.put_sketch(&id, parse_required(&body)?).await.map(Json)
}

async fn infer(State(svc): State<Service>, Path(id): Path<String>) -> Reply {
    svc.infer(&id).await.map(Json)
}

async fn space(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> Reply {
    svc.put_space(&id, parse_required(&body)?).await.map(Json)
}

async fn candidates(State(svc): State<Service>, Path((id, rid)): Path<(String, String)>) -> Reply {
    svc.generate_candidates(&id, &rid).await.map(Json)
}

async fn select(
    State(svc): State<Service>,
    Path((id, rid, index)): Path<(String, String, usize)>,
    body: Bytes,
) -> Reply {
    svc.select(&id, &rid, index, parse_body(&body)?).await.map(Json)
}

async fn placement(State(svc): State<Service>, Path((id, rid)): Path<(String, String)>, body: Bytes) -> Reply {
    svc.place(&id, &rid, parse_body(&body)?).await.map(Json)
}

async fn generate(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> Reply {
    svc.generate(&id, parse_body(&body)?).await.map(Json)
}

async fn results(State(svc): State<Service>, Path(id): Path<String>) -> Reply {
    svc.results(&id).map(Json)
}

async fn artifact(State(svc): State<Service>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let bytes = svc.artifact(&id, &name)?;
    let kind = if name.ends_with(".png") { "image/png" } else { "application/octet-stream" };
    Ok(([(header::CONTENT_TYPE, kind)], bytes).into_response())
}

async fn palette() -> Json<Value> {
    Json(crate::ops::palette())
}

async fn health() -> &'static str {
    "ok"
}

/// All API routes; static files from `ui_dir` are served for any other path.
pub fn router(svc: Service, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/palette", get(palette))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/sketch", put(sketch))
        .route("/sessions/{id}/infer", post(infer))
        .route("/sessions/{id}/space", put(space))
        .route("/sessions/{id}/regions/{rid}/candidates", post(candidates))
        .route("/sessions/{id}/regions/{rid}/candidates/{index}/select", post(select))
        .route("/sessions/{id}/regions/{rid}/placement", patch(placement))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/artifacts/{name}", get(artifact))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(svc);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
