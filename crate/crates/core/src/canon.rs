//! Canonical document encoding: pretty JSON, keys sorted at every depth,
//! trailing newline, and a `schema` version field on top-level documents.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CanonError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("document is not a JSON object")]
    NotAnObject,
    #[error("missing schema field")]
    MissingSchema,
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaMismatch { found: u64 },
}

/// Rebuilds every object with its keys in sorted order.
pub fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sorted = Map::new();
            for (k, v) in entries {
                sorted.insert(k, sort_keys(v));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn value_bytes(value: &Value) -> Result<Vec<u8>, CanonError> {
    let mut out = serde_json::to_vec_pretty(&sort_keys(value.clone()))?;
    out.push(b'\n');
    Ok(out)
}

/// Canonical bytes of any serializable value.
pub fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>, CanonError> {
    value_bytes(&serde_json::to_value(value)?)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Value of `body` with `schema: 1` added at the top level.
pub fn document_value<T: Serialize>(body: &T) -> Result<Value, CanonError> {
    let mut value = serde_json::to_value(body)?;
    let map = value.as_object_mut().ok_or(CanonError::NotAnObject)?;
    map.insert("schema".into(), Value::from(SCHEMA_VERSION));
    Ok(value)
}

pub fn encode_document<T: Serialize>(body: &T) -> Result<Vec<u8>, CanonError> {
    value_bytes(&document_value(body)?)
}

/// Checks and strips the `schema` field, returning the remaining object.
pub fn strip_schema(mut value: Value) -> Result<Value, CanonError> {
    let map = value.as_object_mut().ok_or(CanonError::NotAnObject)?;
    let schema = map.remove("schema").ok_or(CanonError::MissingSchema)?;
    match schema.as_u64() {
        Some(SCHEMA_VERSION) => Ok(value),
        Some(found) => Err(CanonError::SchemaMismatch { found }),
        None => Err(CanonError::MissingSchema),
    }
}

pub fn decode_document<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonError> {
    let value: Value = serde_json::from_slice(bytes)?;
    Ok(serde_json::from_value(strip_schema(value)?)?)
}
