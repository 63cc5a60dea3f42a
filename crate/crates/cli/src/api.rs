//! HTTP JSON surface. Handlers parse input, hand off to [`Studio`] on the
//! blocking pool and render either the entity or an [`ApiError`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use charforge_core::{CharacterSpec, Layer};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ApiError;
use crate::service::{ChatRequestBody, EdgeRequest, EditRequest, RevisionGuard, SelectRequest, Studio};

/// Largest accepted request body (bundles included).
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Shared = Arc<Studio>;
type ApiResult = Result<Response, ApiError>;

async fn blocking<T: Send + 'static>(
    studio: Shared,
    work: impl FnOnce(&Studio) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || work(&studio))
        .await
        .map_err(|e| ApiError::with_code(charforge_core::ErrorCode::StorageIo, format!("worker failed: {e}")))?
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// An empty body reads as the default value.
fn parse_optional<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

fn ok<T: Serialize>(status: StatusCode, value: T) -> ApiResult {
    Ok((status, Json(value)).into_response())
}

async fn health(State(studio): State<Shared>) -> ApiResult {
    ok(StatusCode::OK, studio.health())
}

async fn create_session(State(studio): State<Shared>, body: Bytes) -> ApiResult {
    let spec: CharacterSpec = parse(&body)?;
    ok(StatusCode::CREATED, blocking(studio, move |s| s.create_session(spec)).await?)
}

async fn get_session(State(studio): State<Shared>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(studio, move |s| s.session(&id)).await?)
}

async fn edit_fields(State(studio): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: EditRequest = parse(&body)?;
    ok(StatusCode::OK, blocking(studio, move |s| s.edit_fields(&id, &request)).await?)
}

async fn regenerate(
    State(studio): State<Shared>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> ApiResult {
    let raw = query.get("layer").ok_or_else(|| ApiError::bad_request("missing query parameter layer"))?;
    let layer = Layer::parse(raw)
        .ok_or_else(|| ApiError::bad_request(format!("layer must be profile, keywords or images, got {raw:?}")))?;
    let guard: RevisionGuard = parse_optional(&body)?;
    ok(StatusCode::OK, blocking(studio, move |s| s.regenerate(&id, layer, guard.expected_revision)).await?)
}

async fn select_image(State(studio): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: SelectRequest = parse(&body)?;
    ok(StatusCode::OK, blocking(studio, move |s| s.select_image(&id, &request)).await?)
}

async fn id_card(State(studio): State<Shared>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(studio, move |s| s.id_card(&id)).await?)
}

async fn chat(State(studio): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: ChatRequestBody = parse(&body)?;
    ok(StatusCode::OK, blocking(studio, move |s| s.chat(&id, &request.message)).await?)
}

async fn get_edges(State(studio): State<Shared>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(studio, move |s| s.edges(&id)).await?)
}

async fn add_edge(State(studio): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let edge: EdgeRequest = parse(&body)?;
    ok(StatusCode::CREATED, blocking(studio, move |s| s.add_edge(&id, &edge)).await?)
}

async fn remove_edge(
    State(studio): State<Shared>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult {
    let (Some(from), Some(to)) = (query.get("from").cloned(), query.get("to").cloned()) else {
        return Err(ApiError::bad_request("query parameters from and to are required"));
    };
    ok(StatusCode::OK, blocking(studio, move |s| s.remove_edge(&id, &from, &to)).await?)
}

async fn neighbors(State(studio): State<Shared>, Path((id, character)): Path<(String, String)>) -> ApiResult {
    ok(StatusCode::OK, blocking(studio, move |s| s.neighbors(&id, &character)).await?)
}

async fn export_bundle(State(studio): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let name = format!("attachment; filename=\"{id}.{}\"", charforge_core::store::bundle::BUNDLE_EXTENSION);
    let bytes = blocking(studio, move |s| s.export_bundle(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-tar".to_owned()), (header::CONTENT_DISPOSITION, name)], bytes)
        .into_response())
}

async fn import_bundle(State(studio): State<Shared>, body: Bytes) -> ApiResult {
    let character_id = blocking(studio, move |s| s.import_bundle(&body)).await?;
    ok(StatusCode::CREATED, serde_json::json!({ "character_id": character_id }))
}

async fn blob(State(studio): State<Shared>, Path(hash): Path<String>) -> ApiResult {
    let bytes = blocking(studio, move |s| s.blob(&hash)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn not_found() -> ApiError {
    ApiError::with_code(charforge_core::ErrorCode::NotFound, "no such route")
}

pub fn router(studio: Arc<Studio>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/fields", axum::routing::patch(edit_fields))
        .route("/sessions/{id}/regenerate", post(regenerate))
        .route("/sessions/{id}/select-image", post(select_image))
        .route("/characters/{id}/id-card", get(id_card))
        .route("/characters/{id}/chat", post(chat))
        .route("/characters/{id}/bundle", get(export_bundle))
        .route("/graphs/{id}/edges", get(get_edges).post(add_edge).delete(remove_edge))
        .route("/graphs/{id}/neighbors/{character}", get(neighbors))
        .route("/bundles/import", post(import_bundle))
        .route("/blobs/{hash}", get(blob))
        .fallback(not_found)
        .layer(axum::extract::DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(studio)
}

/// Binds `addr` and serves until the process ends.
pub fn serve(studio: Studio, addr: SocketAddr) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("charforge listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(studio))).await
    })
}
