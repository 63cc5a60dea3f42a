//! Character design co-creation engine.
//!
//! A designer's [`CharacterSpec`] flows through a three-layer text pipeline
//! (profile, keywords, image prompt) and an image provider that returns five
//! reference images. [`GenerationSession`] tracks edits, regeneration and
//! selection with downstream staleness; [`agent`] chats in character;
//! [`LineageGraph`] records relationships; [`Workspace`] persists everything
//! and exchanges `.charpack` bundles.

pub mod agent;
pub mod batch;
pub mod canon;
pub mod clock;
pub mod error;
pub mod lineage;
pub mod model;
pub mod pipeline;
pub mod provider;
pub mod raster;
pub mod session;
pub mod store;

pub use agent::{build_persona, chat, truncate_context, AgentError, ChatTranscript, PersonaCard, Relationship, Speaker, Turn};
pub use batch::{batch_generate_npcs, BatchMember, BatchOutcome};
pub use clock::{Clock, FixedClock, SystemClock};
pub use error::{ConflictError, ErrorCode, ErrorCoded};
pub use lineage::{Direction, Edge, LineageError, LineageGraph, Neighbor, TreeDocument};
pub use model::{
    validate_keywords, validate_profile, validate_spec, word_count, CharacterProfile, CharacterSpec, IdCardDocument,
    ImageId, ImagePrompt, KeywordSet, Layer, ProfileField, ReferenceImage, SpecField, ValidationError,
    ValidationReport, Violation,
};
pub use pipeline::template::{PromptTemplate, TemplateError, TemplateLayer, TemplateSet};
pub use pipeline::{
    build_image_prompt, build_summary_prompt, extract_keywords, parse_profile_response, run_pipeline,
    summarize_profile, ParseError, ParseOutcome, ParseStatus, Pipeline, PipelineError, PipelineResult,
};
pub use provider::{
    make_provider, ChatMessage, ChatRequest, ImageRequest, ProviderConfig, ProviderError, ProviderHandle,
    ProviderKind, Role, TextResult,
};
pub use session::{Actor, GenerationSession, Revision, RevisionOp, SessionError};
pub use store::bundle::{export_bundle, import_bundle, BundleError};
pub use store::{export_id_card, CharacterRecord, EntityKind, StoreError, Workspace};
