#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use charforge_cli::{router, Studio};
use charforge_core::{FixedClock, Pipeline, ProviderHandle, TemplateSet, Workspace};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

pub fn warrior() -> Value {
    json!({
        "role_details": "brave warrior protagonist",
        "background_story": "from a war-torn land",
        "game_type": "open-world RPG",
        "render_style": "anime",
    })
}

pub fn studio(seed: u64) -> (TempDir, Studio) {
    let dir = TempDir::new().unwrap();
    let ws = Workspace::open(dir.path()).unwrap().without_sync();
    let pipeline = Pipeline::new(ProviderHandle::mock(seed), TemplateSet::builtin()).with_image_size(8, 8);
    (dir, Studio::new(ws, pipeline, Arc::new(FixedClock::epoch())))
}

pub fn studio_app(seed: u64) -> (TempDir, Router) {
    let (dir, studio) = studio(seed);
    (dir, router(Arc::new(studio)))
}

pub async fn call_raw(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let request = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let bytes = body.map(|b| serde_json::to_vec(&b).unwrap()).unwrap_or_default();
    let (status, out) = call_raw(app, method, uri, bytes).await;
    let value = if out.is_empty() { Value::Null } else { serde_json::from_slice(&out).unwrap() };
    (status, value)
}
