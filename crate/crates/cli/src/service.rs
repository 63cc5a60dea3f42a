//! Request-level operations over a workspace and a pipeline.
//!
//! Every mutating call loads the entity with its store revision, applies one
//! pure transition and writes back against that revision, so concurrent
//! writers surface as conflicts instead of lost updates.

use std::path::PathBuf;
use std::sync::Arc;

use charforge_core::lineage::LineageError;
use charforge_core::model::ImageId;
use charforge_core::store::Loaded;
use charforge_core::{
    build_persona, chat, export_bundle, export_id_card, import_bundle, CharacterRecord, CharacterSpec,
    ChatTranscript, Clock, ConflictError, EntityKind, ErrorCode, GenerationSession, IdCardDocument, Layer,
    LineageGraph, Neighbor, Pipeline, ProviderConfig, ProviderKind, Relationship, SystemClock, TemplateSet,
    TreeDocument, Workspace,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct StudioConfig {
    pub workspace: PathBuf,
    pub templates: Option<PathBuf>,
    pub provider: ProviderConfig,
}

impl StudioConfig {
    /// Mock provider unless remote credentials are present in the environment.
    pub fn from_env(workspace: impl Into<PathBuf>, templates: Option<PathBuf>, mock_seed: u64) -> Self {
        Self { workspace: workspace.into(), templates, provider: ProviderConfig::from_env(mock_seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub revision: u64,
    #[serde(flatten)]
    pub session: GenerationSession,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FieldEdit {
    pub path: String,
    pub value: Value,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EditRequest {
    pub edits: Vec<FieldEdit>,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RevisionGuard {
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SelectRequest {
    pub image_id: String,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequestBody {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatReply {
    pub reply: String,
    pub transcript: ChatTranscript,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EdgeRequest {
    pub from: String,
    pub to: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphView {
    pub revision: u64,
    #[serde(flatten)]
    pub graph: TreeDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub provider: &'static str,
}

pub struct Studio {
    ws: Workspace,
    pipeline: Pipeline,
    clock: Arc<dyn Clock>,
}

impl Studio {
    /// Validates templates and provider configuration up front.
    pub fn open(config: &StudioConfig) -> Result<Self, ApiError> {
        let templates = match &config.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        let provider = charforge_core::make_provider(&config.provider)?;
        let ws = Workspace::open(&config.workspace)?;
        Ok(Self::new(ws, Pipeline::new(provider, templates), Arc::new(SystemClock)))
    }

    pub fn new(ws: Workspace, pipeline: Pipeline, clock: Arc<dyn Clock>) -> Self {
        Self { ws, pipeline, clock }
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn health(&self) -> Health {
        Health { status: "ok", provider: self.pipeline.provider().kind().as_str() }
    }

    pub fn provider_kind(&self) -> ProviderKind {
        self.pipeline.provider().kind()
    }

    pub fn create_session(&self, spec: CharacterSpec) -> Result<SessionView, ApiError> {
        let session = GenerationSession::create(spec, self.clock.as_ref())?;
        let receipt = self.ws.save(&session, 0)?;
        Ok(SessionView { revision: receipt.revision, session })
    }

    pub fn session(&self, id: &str) -> Result<SessionView, ApiError> {
        let Loaded { value, revision } = self.ws.load::<GenerationSession>(id)?;
        Ok(SessionView { revision, session: value })
    }

    pub fn edit_fields(&self, id: &str, request: &EditRequest) -> Result<SessionView, ApiError> {
        if request.edits.is_empty() {
            return Err(ApiError::with_code(ErrorCode::BadRequest, "edits must not be empty"));
        }
        self.update_session(id, request.expected_revision, |mut session| {
            for edit in &request.edits {
                session = session.edit_field(&edit.path, &edit.value, self.clock.as_ref())?;
            }
            Ok(session)
        })
    }

    pub fn regenerate(&self, id: &str, layer: Layer, expected: Option<u64>) -> Result<SessionView, ApiError> {
        self.update_session(id, expected, |session| Ok(session.regenerate(layer, &self.pipeline, self.clock.as_ref())?))
    }

    pub fn select_image(&self, id: &str, request: &SelectRequest) -> Result<SessionView, ApiError> {
        let image_id = ImageId::parse(&request.image_id)
            .ok_or_else(|| ApiError::with_code(ErrorCode::UnknownImage, format!("unknown image {}", request.image_id)))?;
        self.update_session(id, request.expected_revision, |session| {
            Ok(session.select_image(&image_id, self.clock.as_ref())?)
        })
    }

    fn update_session(
        &self,
        id: &str,
        expected: Option<u64>,
        transition: impl FnOnce(GenerationSession) -> Result<GenerationSession, ApiError>,
    ) -> Result<SessionView, ApiError> {
        let Loaded { value, revision } = self.ws.load::<GenerationSession>(id)?;
        if let Some(expected) = expected {
            if expected != revision {
                return Err(ConflictError::new(EntityKind::Session.as_str(), id, expected, revision).into());
            }
        }
        let session = transition(value)?;
        let receipt = self.ws.save(&session, revision)?;
        if let Some(record) = CharacterRecord::from_session(&session) {
            self.ws.save_latest(&record)?;
        }
        Ok(SessionView { revision: receipt.revision, session })
    }

    pub fn id_card(&self, character_id: &str) -> Result<IdCardDocument, ApiError> {
        let record = self.ws.load::<CharacterRecord>(character_id)?.value;
        let session = self.ws.load::<GenerationSession>(&record.session_id)?.value;
        Ok(export_id_card(&session, self.clock.now())?)
    }

    fn relationships(&self, character_id: &str) -> Result<Vec<Relationship>, ApiError> {
        let mut out = Vec::new();
        for graph in self.ws.graphs_containing(character_id)? {
            for n in graph.neighbors(character_id)? {
                let other_name = self
                    .ws
                    .load::<CharacterRecord>(&n.other_id)
                    .map(|r| r.value.profile.name)
                    .unwrap_or_else(|_| n.other_id.clone());
                out.push(Relationship { other_name, label: n.label, direction: n.direction });
            }
        }
        Ok(out)
    }

    pub fn chat(&self, character_id: &str, message: &str) -> Result<ChatReply, ApiError> {
        let record = self.ws.load::<CharacterRecord>(character_id)?.value;
        let keywords = record.keywords.as_ref().ok_or_else(|| {
            ApiError::with_code(ErrorCode::PreconditionFailed, format!("character {character_id} has no keywords yet"))
        })?;
        let card = build_persona(character_id, &record.profile, keywords, &self.relationships(character_id)?)?;
        let (transcript, revision) = match self.ws.load::<ChatTranscript>(character_id) {
            Ok(Loaded { value, revision }) => (value, revision),
            Err(charforge_core::StoreError::NotFound { .. }) => (ChatTranscript::new(character_id), 0),
            Err(e) => return Err(e.into()),
        };
        let (reply, transcript) = chat(&card, &transcript, message, self.pipeline.provider(), self.clock.as_ref())?;
        self.ws.save(&transcript, revision)?;
        Ok(ChatReply { reply, transcript })
    }

    fn graph(&self, graph_id: &str) -> Result<(LineageGraph, u64), ApiError> {
        match self.ws.load::<LineageGraph>(graph_id) {
            Ok(Loaded { value, revision }) => Ok((value, revision)),
            Err(charforge_core::StoreError::NotFound { .. }) => Ok((LineageGraph::new(graph_id), 0)),
            Err(e) => Err(e.into()),
        }
    }

    /// An absent graph reads as empty.
    pub fn edges(&self, graph_id: &str) -> Result<GraphView, ApiError> {
        charforge_core::store::validate_id(graph_id)?;
        let (graph, revision) = self.graph(graph_id)?;
        Ok(GraphView { revision, graph: graph.export() })
    }

    /// Both ends must be saved characters; they join the graph if new to it.
    pub fn add_edge(&self, graph_id: &str, edge: &EdgeRequest) -> Result<GraphView, ApiError> {
        for id in [&edge.from, &edge.to] {
            if !self.ws.exists(EntityKind::Character, id) {
                return Err(LineageError::UnknownNode(id.clone()).into());
            }
        }
        let (graph, revision) = self.graph(graph_id)?;
        let graph = graph.add_node(edge.from.clone()).add_node(edge.to.clone()).link(&edge.from, &edge.to, &edge.label)?;
        let receipt = self.ws.save(&graph, revision)?;
        Ok(GraphView { revision: receipt.revision, graph: graph.export() })
    }

    pub fn remove_edge(&self, graph_id: &str, from: &str, to: &str) -> Result<GraphView, ApiError> {
        let Loaded { value, revision } = self.ws.load::<LineageGraph>(graph_id)?;
        let graph = value.unlink(from, to)?;
        let receipt = self.ws.save(&graph, revision)?;
        Ok(GraphView { revision: receipt.revision, graph: graph.export() })
    }

    pub fn neighbors(&self, graph_id: &str, character_id: &str) -> Result<Vec<Neighbor>, ApiError> {
        let graph = self.ws.load::<LineageGraph>(graph_id)?.value;
        Ok(graph.neighbors(character_id)?)
    }

    pub fn export_bundle(&self, character_id: &str) -> Result<Vec<u8>, ApiError> {
        Ok(export_bundle(&self.ws, character_id)?)
    }

    pub fn import_bundle(&self, bytes: &[u8]) -> Result<String, ApiError> {
        Ok(import_bundle(&self.ws, bytes)?)
    }

    pub fn blob(&self, hash: &str) -> Result<Vec<u8>, ApiError> {
        let id = ImageId::parse(hash)
            .ok_or_else(|| ApiError::with_code(ErrorCode::InvalidId, format!("not an image digest: {hash:?}")))?;
        Ok(self.ws.get_blob(&id)?)
    }
}
