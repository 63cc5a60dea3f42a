//! File-backed workspace: canonical JSON documents plus a content-addressed
//! image blob directory.
//!
//! ```text
//! <root>/characters/<id>.char.json
//! <root>/sessions/<id>.session.json
//! <root>/transcripts/<id>.chat.json
//! <root>/graphs/<id>.tree.json
//! <root>/blobs/<hash>.png
//! ```
//!
//! Every document carries `schema` and a store `revision` counter. Writes go
//! to a temporary file that is renamed over the target, and are rejected
//! when the caller's expected revision is not the stored one.

pub mod bundle;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::ChatTranscript;
use crate::canon::{self, CanonError};
use crate::error::ConflictError;
use crate::lineage::LineageGraph;
use crate::model::{CharacterProfile, CharacterSpec, IdCardDocument, ImageId, KeywordSet};
use crate::session::GenerationSession;

pub const MAX_ID_CHARS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Character,
    Session,
    Transcript,
    Graph,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [EntityKind::Character, EntityKind::Session, EntityKind::Transcript, EntityKind::Graph];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Character => "character",
            EntityKind::Session => "session",
            EntityKind::Transcript => "transcript",
            EntityKind::Graph => "graph",
        }
    }

    pub fn dir(self) -> &'static str {
        match self {
            EntityKind::Character => "characters",
            EntityKind::Session => "sessions",
            EntityKind::Transcript => "transcripts",
            EntityKind::Graph => "graphs",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EntityKind::Character => ".char.json",
            EntityKind::Session => ".session.json",
            EntityKind::Transcript => ".chat.json",
            EntityKind::Graph => ".tree.json",
        }
    }

    /// Workspace-relative path of an entity file.
    pub fn relative_path(self, id: &str) -> String {
        format!("{}/{}{}", self.dir(), id, self.extension())
    }
}

pub const BLOB_DIR: &str = "blobs";

pub fn blob_relative_path(id: &ImageId) -> String {
    format!("{BLOB_DIR}/{}.png", id.as_str())
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{kind} {id} not found")]
    NotFound { kind: EntityKind, id: String },
    #[error("invalid id {0:?}: use 1..={MAX_ID_CHARS} of A-Z a-z 0-9 _ -")]
    InvalidId(String),
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error("{kind} {id} is corrupt: {reason}")]
    CorruptEntity { kind: EntityKind, id: String, reason: String },
    #[error("{kind} {id} is invalid: {reason}")]
    InvalidEntity { kind: EntityKind, id: String, reason: String },
    #[error("image blob {0} is missing")]
    MissingBlob(String),
    #[error("write of {0} interrupted before rename")]
    InjectedFault(PathBuf),
    #[error("character is incomplete: {0}")]
    Incomplete(String),
}

impl std::fmt::Display for EntityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_owned(), source }
}

pub fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = (1..=MAX_ID_CHARS).contains(&id.len())
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_owned()))
    }
}

/// A value the workspace persists.
pub trait Entity: Serialize + DeserializeOwned {
    const KIND: EntityKind;
    fn entity_id(&self) -> &str;
    fn check(&self) -> Result<(), String>;
}

/// Persisted summary of a character, derived from its session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub character_id: String,
    pub session_id: String,
    pub spec: CharacterSpec,
    pub profile: CharacterProfile,
    pub keywords: Option<KeywordSet>,
    pub selected_image_id: Option<ImageId>,
}

impl CharacterRecord {
    /// `None` until the session has a profile. The character id is the session id.
    pub fn from_session(session: &GenerationSession) -> Option<Self> {
        Some(Self {
            character_id: session.session_id().to_owned(),
            session_id: session.session_id().to_owned(),
            spec: session.spec().clone(),
            profile: session.profile()?.clone(),
            keywords: session.keywords().cloned(),
            selected_image_id: session.selected_image_id().cloned(),
        })
    }
}

impl Entity for CharacterRecord {
    const KIND: EntityKind = EntityKind::Character;

    fn entity_id(&self) -> &str {
        &self.character_id
    }

    fn check(&self) -> Result<(), String> {
        crate::model::validate_profile(&self.profile).into_result().map_err(|e| e.to_string())
    }
}

impl Entity for GenerationSession {
    const KIND: EntityKind = EntityKind::Session;

    fn entity_id(&self) -> &str {
        self.session_id()
    }

    fn check(&self) -> Result<(), String> {
        self.check_invariants()
    }
}

impl Entity for ChatTranscript {
    const KIND: EntityKind = EntityKind::Transcript;

    fn entity_id(&self) -> &str {
        &self.character_id
    }

    fn check(&self) -> Result<(), String> {
        self.check_invariants()
    }
}

impl Entity for LineageGraph {
    const KIND: EntityKind = EntityKind::Graph;

    fn entity_id(&self) -> &str {
        self.graph_id()
    }

    fn check(&self) -> Result<(), String> {
        self.check_invariants().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub kind: EntityKind,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<E> {
    pub value: E,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: EntityKind,
    pub id: String,
    pub revision: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Fail the next save after the temporary file is written.
    BeforeRename,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    write_lock: Mutex<()>,
    fault: Mutex<Option<Fault>>,
    sync: bool,
}

/// Moves every `media` payload of an image object into the blob store,
/// leaving its `image_id` as the reference.
fn externalize(ws: &Workspace, value: &mut Value) -> Result<(), StoreError> {
    match value {
        Value::Object(map) => {
            if let (Some(Value::String(id)), Some(Value::String(media))) = (map.get("image_id"), map.get("media")) {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(media)
                    .map_err(|e| StoreError::InvalidEntity {
                        kind: EntityKind::Session,
                        id: id.clone(),
                        reason: format!("image media is not base64: {e}"),
                    })?;
                let stored = ws.put_blob(&bytes)?;
                if stored.as_str() != id {
                    return Err(StoreError::InvalidEntity {
                        kind: EntityKind::Session,
                        id: id.clone(),
                        reason: "image id does not match media digest".into(),
                    });
                }
                map.remove("media");
                return Ok(());
            }
            map.values_mut().try_for_each(|v| externalize(ws, v))
        }
        Value::Array(items) => items.iter_mut().try_for_each(|v| externalize(ws, v)),
        _ => Ok(()),
    }
}

fn internalize(ws: &Workspace, value: &mut Value) -> Result<(), StoreError> {
    match value {
        Value::Object(map) => {
            let is_image = map.contains_key("prompt_used") && !map.contains_key("media");
            if let (true, Some(Value::String(id))) = (is_image, map.get("image_id")) {
                let image_id = ImageId::parse(id).ok_or_else(|| StoreError::MissingBlob(id.clone()))?;
                let media = ws.get_blob(&image_id)?;
                map.insert("media".into(), Value::from(crate::model::encode_base64(&media)));
                return Ok(());
            }
            map.values_mut().try_for_each(|v| internalize(ws, v))
        }
        Value::Array(items) => items.iter_mut().try_for_each(|v| internalize(ws, v)),
        _ => Ok(()),
    }
}

/// Image ids referenced anywhere in a stored document value.
pub fn referenced_images(value: &Value, out: &mut std::collections::BTreeSet<String>) {
    match value {
        Value::Object(map) => {
            if let (Some(Value::String(id)), true) = (map.get("image_id"), map.contains_key("prompt_used")) {
                out.insert(id.clone());
            }
            map.values().for_each(|v| referenced_images(v, out));
        }
        Value::Array(items) => items.iter().for_each(|v| referenced_images(v, out)),
        _ => {}
    }
}

impl Workspace {
    /// Opens `root`, creating the directory layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in EntityKind::ALL.iter().map(|k| k.dir()).chain([BLOB_DIR]) {
            let path = root.join(dir);
            fs::create_dir_all(&path).map_err(io_err(&path))?;
            // Temp files left by an interrupted write.
            for name in read_dir_names(&path)? {
                if name.starts_with('.') && name.ends_with(".tmp") {
                    let stray = path.join(&name);
                    fs::remove_file(&stray).map_err(io_err(&stray))?;
                }
            }
        }
        Ok(Self { root, write_lock: Mutex::new(()), fault: Mutex::new(None), sync: true })
    }

    /// Skips fsync before rename. Writes stay atomic but not durable across power loss.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn inject_fault(&self, fault: Fault) {
        *self.fault.lock().unwrap() = Some(fault);
    }

    pub fn entity_path(&self, kind: EntityKind, id: &str) -> PathBuf {
        self.root.join(kind.relative_path(id))
    }

    pub fn blob_path(&self, id: &ImageId) -> PathBuf {
        self.root.join(blob_relative_path(id))
    }

    /// Stores `media` under its digest. Storing the same bytes twice is a no-op.
    pub fn put_blob(&self, media: &[u8]) -> Result<ImageId, StoreError> {
        let id = ImageId::of(media);
        let path = self.blob_path(&id);
        if !path.exists() {
            self.write_atomic(&path, media, false)?;
        }
        Ok(id)
    }

    pub fn get_blob(&self, id: &ImageId) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(id);
        match fs::read(&path) {
            Ok(bytes) if ImageId::of(&bytes) == *id => Ok(bytes),
            Ok(_) => Err(StoreError::MissingBlob(format!("{id} (content does not match digest)"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::MissingBlob(id.to_string())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn has_blob(&self, id: &ImageId) -> bool {
        self.blob_path(id).is_file()
    }

    pub fn blob_ids(&self) -> Result<Vec<ImageId>, StoreError> {
        let dir = self.root.join(BLOB_DIR);
        let mut ids: Vec<ImageId> = read_dir_names(&dir)?
            .iter()
            .filter_map(|name| name.strip_suffix(".png").and_then(ImageId::parse))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8], allow_fault: bool) -> Result<(), StoreError> {
        let name = path.file_name().and_then(|n| n.to_str()).expect("entity paths have file names");
        let tmp = path.with_file_name(format!(".{name}.tmp"));
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        if self.sync {
            file.sync_all().map_err(io_err(&tmp))?;
        }
        drop(file);
        if allow_fault && self.fault.lock().unwrap().take() == Some(Fault::BeforeRename) {
            return Err(StoreError::InjectedFault(path.to_owned()));
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    /// Raw bytes of an entity file.
    pub fn read_raw(&self, kind: EntityKind, id: &str) -> Result<Vec<u8>, StoreError> {
        validate_id(id)?;
        let path = self.entity_path(kind, id);
        fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound { kind, id: id.to_owned() }
            } else {
                io_err(&path)(e)
            }
        })
    }

    fn parse_raw(kind: EntityKind, id: &str, bytes: &[u8]) -> Result<(Value, u64), StoreError> {
        let corrupt = |reason: String| StoreError::CorruptEntity { kind, id: id.to_owned(), reason };
        let value: Value = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
        let mut value = canon::strip_schema(value).map_err(|e| corrupt(e.to_string()))?;
        let revision = value
            .as_object_mut()
            .and_then(|m| m.remove("revision"))
            .and_then(|r| r.as_u64())
            .ok_or_else(|| corrupt("missing revision".into()))?;
        Ok((value, revision))
    }

    /// Stored revision of an entity; 0 when absent.
    pub fn revision_of(&self, kind: EntityKind, id: &str) -> Result<u64, StoreError> {
        match self.read_raw(kind, id) {
            Ok(bytes) => Ok(Self::parse_raw(kind, id, &bytes)?.1),
            Err(StoreError::NotFound { .. }) => Ok(0),
            Err(e) => Err(e),
        }
    }

    pub fn exists(&self, kind: EntityKind, id: &str) -> bool {
        validate_id(id).is_ok() && self.entity_path(kind, id).is_file()
    }

    /// Canonical on-disk bytes for `entity` at `revision`; image media is moved to blobs.
    fn document_bytes<E: Entity>(&self, entity: &E, revision: u64) -> Result<Vec<u8>, StoreError> {
        let mut value = serde_json::to_value(entity).map_err(|e| StoreError::InvalidEntity {
            kind: E::KIND,
            id: entity.entity_id().to_owned(),
            reason: e.to_string(),
        })?;
        externalize(self, &mut value)?;
        let map = value.as_object_mut().expect("entities serialize as objects");
        map.insert("revision".into(), Value::from(revision));
        map.insert("schema".into(), Value::from(canon::SCHEMA_VERSION));
        canon::value_bytes(&value).map_err(|e: CanonError| StoreError::InvalidEntity {
            kind: E::KIND,
            id: entity.entity_id().to_owned(),
            reason: e.to_string(),
        })
    }

    /// Writes `entity` if the stored revision equals `expected` (0 for new).
    pub fn save<E: Entity>(&self, entity: &E, expected: u64) -> Result<Receipt, StoreError> {
        let id = entity.entity_id();
        validate_id(id)?;
        entity.check().map_err(|reason| StoreError::InvalidEntity { kind: E::KIND, id: id.to_owned(), reason })?;
        let _guard = self.write_lock.lock().unwrap();
        let actual = self.revision_of(E::KIND, id)?;
        if actual != expected {
            return Err(ConflictError::new(E::KIND.as_str(), id, expected, actual).into());
        }
        let revision = expected + 1;
        let bytes = self.document_bytes(entity, revision)?;
        self.write_atomic(&self.entity_path(E::KIND, id), &bytes, true)?;
        Ok(Receipt { kind: E::KIND, revision })
    }

    /// Creates an absent entity directly at `revision` (at least 1).
    pub fn restore<E: Entity>(&self, entity: &E, revision: u64) -> Result<Receipt, StoreError> {
        let id = entity.entity_id();
        validate_id(id)?;
        entity.check().map_err(|reason| StoreError::InvalidEntity { kind: E::KIND, id: id.to_owned(), reason })?;
        let _guard = self.write_lock.lock().unwrap();
        let actual = self.revision_of(E::KIND, id)?;
        if actual != 0 {
            return Err(ConflictError::new(E::KIND.as_str(), id, 0, actual).into());
        }
        let revision = revision.max(1);
        let bytes = self.document_bytes(entity, revision)?;
        self.write_atomic(&self.entity_path(E::KIND, id), &bytes, true)?;
        Ok(Receipt { kind: E::KIND, revision })
    }

    /// Saves against whatever revision is currently stored.
    pub fn save_latest<E: Entity>(&self, entity: &E) -> Result<Receipt, StoreError> {
        let expected = self.revision_of(E::KIND, entity.entity_id())?;
        self.save(entity, expected)
    }

    pub fn load<E: Entity>(&self, id: &str) -> Result<Loaded<E>, StoreError> {
        let bytes = self.read_raw(E::KIND, id)?;
        let (mut value, revision) = Self::parse_raw(E::KIND, id, &bytes)?;
        internalize(self, &mut value)?;
        let corrupt = |reason: String| StoreError::CorruptEntity { kind: E::KIND, id: id.to_owned(), reason };
        let entity: E = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        if entity.entity_id() != id {
            return Err(corrupt(format!("file holds id {}", entity.entity_id())));
        }
        entity.check().map_err(corrupt)?;
        Ok(Loaded { value: entity, revision })
    }

    pub fn list(&self, kind: EntityKind) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = read_dir_names(&self.root.join(kind.dir()))?
            .into_iter()
            .filter(|n| !n.starts_with('.'))
            .filter_map(|n| n.strip_suffix(kind.extension()).map(str::to_owned))
            .filter(|id| validate_id(id).is_ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Every entity with its revision, read from the directory contents.
    pub fn index(&self) -> Result<Vec<IndexEntry>, StoreError> {
        let mut out = Vec::new();
        for kind in EntityKind::ALL {
            for id in self.list(kind)? {
                let revision = self.revision_of(kind, &id)?;
                out.push(IndexEntry { kind, id, revision });
            }
        }
        Ok(out)
    }

    /// Graphs that contain `character_id` as a node.
    pub fn graphs_containing(&self, character_id: &str) -> Result<Vec<LineageGraph>, StoreError> {
        let mut out = Vec::new();
        for id in self.list(EntityKind::Graph)? {
            let graph = self.load::<LineageGraph>(&id)?.value;
            if graph.contains(character_id) {
                out.push(graph);
            }
        }
        Ok(out)
    }
}

fn read_dir_names(dir: &Path) -> Result<Vec<String>, StoreError> {
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(name) = entry.file_name().to_str() {
            names.push(name.to_owned());
        }
    }
    Ok(names)
}

/// ID card for a finished session: fresh layers and a selected image.
pub fn export_id_card(session: &GenerationSession, issued_at: DateTime<Utc>) -> Result<IdCardDocument, StoreError> {
    if let Some(layer) = session.stale().iter().next() {
        return Err(StoreError::Incomplete(format!("{layer} is stale or missing")));
    }
    let (Some(profile), Some(keywords)) = (session.profile(), session.keywords()) else {
        return Err(StoreError::Incomplete("profile or keywords missing".into()));
    };
    let selected = session
        .selected_image()
        .ok_or_else(|| StoreError::Incomplete("no image selected".into()))?;
    Ok(IdCardDocument {
        character_id: session.session_id().to_owned(),
        profile: profile.clone(),
        selected_image: selected.clone(),
        media_ref: blob_relative_path(&selected.image_id),
        keywords: keywords.clone(),
        issued_at,
    })
}
