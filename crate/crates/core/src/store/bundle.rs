//! Portable `.charpack` bundles: a deterministic tar archive holding one
//! character, its session, transcript, incident graph edges and image blobs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    blob_relative_path, referenced_images, validate_id, CharacterRecord, EntityKind, StoreError, Workspace,
    BLOB_DIR,
};
use crate::agent::ChatTranscript;
use crate::canon::{self, SCHEMA_VERSION};
use crate::lineage::LineageGraph;
use crate::model::ImageId;
use crate::session::GenerationSession;

pub const BUNDLE_EXTENSION: &str = "charpack";
pub const MANIFEST_PATH: &str = "manifest.json";
const MAX_ENTRY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{entry}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaMismatch { entry: String, found: u64 },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub character_id: String,
    pub entries: Vec<String>,
}

fn tar_entry(builder: &mut tar::Builder<Vec<u8>>, path: &str, data: &[u8]) -> std::io::Result<()> {
    let mut header = tar::Header::new_ustar();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, path, data)
}

/// Archive bytes for `character_id`. Identical workspace content gives identical bytes.
pub fn export_bundle(ws: &Workspace, character_id: &str) -> Result<Vec<u8>, BundleError> {
    validate_id(character_id)?;
    let record = ws.load::<CharacterRecord>(character_id)?.value;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut images = BTreeSet::new();

    files.insert(EntityKind::Character.relative_path(character_id), ws.read_raw(EntityKind::Character, character_id)?);
    if let Some(id) = &record.selected_image_id {
        images.insert(id.as_str().to_owned());
    }
    let session_bytes = ws.read_raw(EntityKind::Session, &record.session_id)?;
    let session_value: Value = serde_json::from_slice(&session_bytes)
        .map_err(|e| StoreError::CorruptEntity { kind: EntityKind::Session, id: record.session_id.clone(), reason: e.to_string() })?;
    referenced_images(&session_value, &mut images);
    files.insert(EntityKind::Session.relative_path(&record.session_id), session_bytes);

    if ws.exists(EntityKind::Transcript, character_id) {
        files.insert(
            EntityKind::Transcript.relative_path(character_id),
            ws.read_raw(EntityKind::Transcript, character_id)?,
        );
    }
    for graph in ws.graphs_containing(character_id)? {
        let sub = graph.incident_subgraph(character_id).expect("graph contains the character");
        let revision = ws.revision_of(EntityKind::Graph, graph.graph_id())?;
        let mut value = canon::document_value(&sub).map_err(|e| BundleError::CorruptBundle(e.to_string()))?;
        value.as_object_mut().expect("object").insert("revision".into(), Value::from(revision));
        let bytes = canon::value_bytes(&value).map_err(|e| BundleError::CorruptBundle(e.to_string()))?;
        files.insert(EntityKind::Graph.relative_path(graph.graph_id()), bytes);
    }
    for id in images {
        let image_id = ImageId::parse(&id).ok_or_else(|| StoreError::MissingBlob(id.clone()))?;
        files.insert(blob_relative_path(&image_id), ws.get_blob(&image_id)?);
    }

    let manifest = Manifest {
        format: BUNDLE_EXTENSION.into(),
        character_id: character_id.to_owned(),
        entries: files.keys().cloned().collect(),
    };
    let manifest_bytes = canon::encode_document(&manifest).map_err(|e| BundleError::CorruptBundle(e.to_string()))?;

    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    let io = |e: std::io::Error| BundleError::CorruptBundle(format!("writing archive: {e}"));
    tar_entry(&mut builder, MANIFEST_PATH, &manifest_bytes).map_err(io)?;
    for (path, data) in &files {
        tar_entry(&mut builder, path, data).map_err(io)?;
    }
    builder.into_inner().map_err(io)
}

fn entry_kind(path: &str) -> Option<(EntityKind, &str)> {
    EntityKind::ALL.into_iter().find_map(|kind| {
        let id = path.strip_prefix(kind.dir())?.strip_prefix('/')?.strip_suffix(kind.extension())?;
        validate_id(id).ok().map(|_| (kind, id))
    })
}

fn read_entries(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>, BundleError> {
    let corrupt = |e: std::io::Error| BundleError::CorruptBundle(e.to_string());
    let mut archive = tar::Archive::new(bytes);
    let mut out = BTreeMap::new();
    for entry in archive.entries().map_err(corrupt)? {
        let entry = entry.map_err(corrupt)?;
        if entry.header().entry_type() != tar::EntryType::Regular {
            return Err(BundleError::CorruptBundle("non-file entry".into()));
        }
        let path = entry.path().map_err(corrupt)?.to_string_lossy().into_owned();
        if entry.size() > MAX_ENTRY_BYTES {
            return Err(BundleError::CorruptBundle(format!("{path} too large")));
        }
        let mut data = Vec::with_capacity(entry.size() as usize);
        entry.take(MAX_ENTRY_BYTES).read_to_end(&mut data).map_err(corrupt)?;
        if out.insert(path.clone(), data).is_some() {
            return Err(BundleError::CorruptBundle(format!("duplicate entry {path}")));
        }
    }
    Ok(out)
}

fn check_schema(entry: &str, bytes: &[u8]) -> Result<Value, BundleError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| BundleError::CorruptBundle(format!("{entry}: {e}")))?;
    match canon::strip_schema(value) {
        Ok(v) => Ok(v),
        Err(canon::CanonError::SchemaMismatch { found }) => Err(BundleError::SchemaMismatch { entry: entry.into(), found }),
        Err(e) => Err(BundleError::CorruptBundle(format!("{entry}: {e}"))),
    }
}

fn revision_in(value: &Value) -> u64 {
    value.get("revision").and_then(Value::as_u64).unwrap_or(1)
}

/// Writes the bundle's entities into `ws` and returns the character id.
///
/// In an empty workspace every entity keeps its bundled revision. Entities
/// that already exist are overwritten at the next revision, and graphs are
/// merged with the existing graph of the same id.
pub fn import_bundle(ws: &Workspace, bytes: &[u8]) -> Result<String, BundleError> {
    let entries = read_entries(bytes)?;
    let manifest_bytes = entries
        .get(MANIFEST_PATH)
        .ok_or_else(|| BundleError::CorruptBundle("missing manifest.json".into()))?;
    let manifest: Manifest = serde_json::from_value(check_schema(MANIFEST_PATH, manifest_bytes)?)
        .map_err(|e| BundleError::CorruptBundle(format!("manifest: {e}")))?;
    validate_id(&manifest.character_id).map_err(|e| BundleError::CorruptBundle(e.to_string()))?;
    let listed: BTreeSet<&str> = manifest.entries.iter().map(String::as_str).collect();
    let present: BTreeSet<&str> = entries.keys().map(String::as_str).filter(|p| *p != MANIFEST_PATH).collect();
    if listed != present {
        return Err(BundleError::CorruptBundle("manifest does not match archive entries".into()));
    }

    let mut documents = Vec::new();
    for (path, data) in &entries {
        if path == MANIFEST_PATH {
            continue;
        }
        if let Some(name) = path.strip_prefix(BLOB_DIR).and_then(|p| p.strip_prefix('/')) {
            let id = name.strip_suffix(".png").and_then(ImageId::parse);
            if id != Some(ImageId::of(data)) {
                return Err(BundleError::CorruptBundle(format!("{path} does not match its digest")));
            }
            continue;
        }
        let (kind, id) = entry_kind(path).ok_or_else(|| BundleError::CorruptBundle(format!("unexpected entry {path}")))?;
        documents.push((kind, id.to_owned(), check_schema(path, data)?));
    }
    let character_path = EntityKind::Character.relative_path(&manifest.character_id);
    if !entries.contains_key(&character_path) {
        return Err(BundleError::CorruptBundle(format!("missing {character_path}")));
    }

    for (path, data) in &entries {
        if path.starts_with(BLOB_DIR) {
            ws.put_blob(data)?;
        }
    }
    // Decode everything before writing anything so a bad entity leaves the workspace unchanged.
    let mut pending = Vec::new();
    for (kind, id, value) in documents {
        let revision = revision_in(&value);
        let staged = match kind {
            EntityKind::Character => Staged::Character(decode_entity(ws, kind, &id, value)?),
            EntityKind::Session => Staged::Session(decode_entity(ws, kind, &id, value)?),
            EntityKind::Transcript => Staged::Transcript(decode_entity(ws, kind, &id, value)?),
            EntityKind::Graph => Staged::Graph(decode_entity(ws, kind, &id, value)?),
        };
        pending.push((kind, id, revision, staged));
    }
    for (kind, id, revision, staged) in pending {
        let existing = ws.revision_of(kind, &id)?;
        let write = |ws: &Workspace| -> Result<(), StoreError> {
            match &staged {
                Staged::Character(v) => put_at(ws, v, existing, revision),
                Staged::Session(v) => put_at(ws, v, existing, revision),
                Staged::Transcript(v) => put_at(ws, v, existing, revision),
                Staged::Graph(v) => {
                    if existing > 0 {
                        let current = ws.load::<LineageGraph>(&id)?.value;
                        put_at(ws, &current.merge(v), existing, revision)
                    } else {
                        put_at(ws, v, existing, revision)
                    }
                }
            }
        };
        write(ws)?;
    }
    Ok(manifest.character_id)
}

enum Staged {
    Character(CharacterRecord),
    Session(GenerationSession),
    Transcript(ChatTranscript),
    Graph(LineageGraph),
}

fn decode_entity<E: super::Entity>(ws: &Workspace, kind: EntityKind, id: &str, mut value: Value) -> Result<E, BundleError> {
    if let Some(map) = value.as_object_mut() {
        map.remove("revision");
    }
    super::internalize(ws, &mut value)?;
    let corrupt = |reason: String| BundleError::CorruptBundle(format!("{kind} {id}: {reason}"));
    let entity: E = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    if entity.entity_id() != id {
        return Err(corrupt(format!("file holds id {}", entity.entity_id())));
    }
    entity.check().map_err(corrupt)?;
    Ok(entity)
}

/// Writes into an empty slot at the bundled revision, or over an existing one at the next revision.
fn put_at<E: super::Entity>(ws: &Workspace, entity: &E, existing: u64, bundled: u64) -> Result<(), StoreError> {
    if existing == 0 {
        ws.restore(entity, bundled).map(|_| ())
    } else {
        ws.save(entity, existing).map(|_| ())
    }
}
