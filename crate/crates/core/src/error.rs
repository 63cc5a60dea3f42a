//! Shared error types and the machine-readable code every error maps to.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::AgentError;
use crate::lineage::LineageError;
use crate::model::ValidationError;
use crate::pipeline::template::TemplateError;
use crate::pipeline::PipelineError;
use crate::provider::ProviderError;
use crate::session::SessionError;
use crate::store::bundle::BundleError;
use crate::store::StoreError;

/// A write carried a revision count that no longer matches the stored one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind} {id}: expected revision {expected}, found {actual}")]
pub struct ConflictError {
    pub kind: String,
    pub id: String,
    pub expected: u64,
    pub actual: u64,
}

impl ConflictError {
    pub fn new(kind: &str, id: &str, expected: u64, actual: u64) -> Self {
        Self { kind: kind.into(), id: id.into(), expected, actual }
    }
}

macro_rules! error_codes {
    ($($variant:ident => ($status:expr, $code:literal)),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum ErrorCode {
            $($variant),+
        }

        impl ErrorCode {
            pub const ALL: &'static [ErrorCode] = &[$(ErrorCode::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(ErrorCode::$variant => $code),+
                }
            }

            pub fn http_status(self) -> u16 {
                match self {
                    $(ErrorCode::$variant => $status),+
                }
            }
        }
    };
}

error_codes! {
    BadRequest => (400, "BAD_REQUEST"),
    ValidationFailed => (422, "VALIDATION_FAILED"),
    Conflict => (409, "CONFLICT"),
    TemplateUnknownPlaceholder => (500, "TEMPLATE_UNKNOWN_PLACEHOLDER"),
    TemplateUnterminated => (500, "TEMPLATE_UNTERMINATED"),
    TemplateMissingText => (500, "TEMPLATE_MISSING_TEXT"),
    TemplateLayout => (500, "TEMPLATE_LAYOUT"),
    TemplateWrongLayer => (500, "TEMPLATE_WRONG_LAYER"),
    TemplateMissing => (500, "TEMPLATE_MISSING"),
    TemplateIo => (500, "TEMPLATE_IO"),
    ProviderConfig => (500, "PROVIDER_CONFIG"),
    ProviderInvalidRequest => (400, "PROVIDER_INVALID_REQUEST"),
    ProviderTimeout => (504, "PROVIDER_TIMEOUT"),
    ProviderRateLimited => (429, "PROVIDER_RATE_LIMITED"),
    ProviderUnavailable => (503, "PROVIDER_UNAVAILABLE"),
    ProviderRejected => (502, "PROVIDER_REJECTED"),
    ProviderMalformedResponse => (502, "PROVIDER_MALFORMED_RESPONSE"),
    ContentRefused => (422, "CONTENT_REFUSED"),
    PreconditionFailed => (400, "PRECONDITION_FAILED"),
    ProfileUnparseable => (502, "PROFILE_UNPARSEABLE"),
    UnknownPath => (400, "UNKNOWN_PATH"),
    TypeMismatch => (400, "TYPE_MISMATCH"),
    UpstreamStale => (409, "UPSTREAM_STALE"),
    UnknownImage => (404, "UNKNOWN_IMAGE"),
    StaleImages => (409, "STALE_IMAGES"),
    CorruptRevisionLog => (500, "CORRUPT_REVISION_LOG"),
    EmptyMessage => (400, "EMPTY_MESSAGE"),
    BadWindow => (400, "BAD_WINDOW"),
    SelfLoop => (422, "SELF_LOOP"),
    UnknownNode => (404, "UNKNOWN_NODE"),
    BadLabel => (422, "BAD_LABEL"),
    UnknownEdge => (404, "UNKNOWN_EDGE"),
    DuplicateEdge => (422, "DUPLICATE_EDGE"),
    StorageIo => (500, "STORAGE_IO"),
    NotFound => (404, "NOT_FOUND"),
    InvalidId => (400, "INVALID_ID"),
    CorruptEntity => (500, "CORRUPT_ENTITY"),
    InvalidEntity => (422, "INVALID_ENTITY"),
    MissingBlob => (500, "MISSING_BLOB"),
    WriteInterrupted => (500, "WRITE_INTERRUPTED"),
    Incomplete => (409, "INCOMPLETE"),
    SchemaMismatch => (422, "SCHEMA_MISMATCH"),
    CorruptBundle => (400, "CORRUPT_BUNDLE"),
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Errors that carry a machine-readable code and optional structured details.
pub trait ErrorCoded: std::error::Error {
    fn code(&self) -> ErrorCode;

    fn details(&self) -> Option<Value> {
        None
    }
}

impl ErrorCoded for ValidationError {
    fn code(&self) -> ErrorCode {
        ErrorCode::ValidationFailed
    }

    fn details(&self) -> Option<Value> {
        Some(json!({ "violations": self.0.messages() }))
    }
}

impl ErrorCoded for ConflictError {
    fn code(&self) -> ErrorCode {
        ErrorCode::Conflict
    }

    fn details(&self) -> Option<Value> {
        Some(json!({ "expected_revision": self.expected, "actual_revision": self.actual }))
    }
}

impl ErrorCoded for TemplateError {
    fn code(&self) -> ErrorCode {
        match self {
            TemplateError::UnknownPlaceholder { .. } => ErrorCode::TemplateUnknownPlaceholder,
            TemplateError::Unterminated { .. } => ErrorCode::TemplateUnterminated,
            TemplateError::MissingText { .. } => ErrorCode::TemplateMissingText,
            TemplateError::Layout { .. } => ErrorCode::TemplateLayout,
            TemplateError::WrongLayer { .. } => ErrorCode::TemplateWrongLayer,
            TemplateError::Missing { .. } => ErrorCode::TemplateMissing,
            TemplateError::Io { .. } => ErrorCode::TemplateIo,
        }
    }
}

impl ErrorCoded for ProviderError {
    fn code(&self) -> ErrorCode {
        match self {
            ProviderError::Config(_) => ErrorCode::ProviderConfig,
            ProviderError::InvalidRequest(_) => ErrorCode::ProviderInvalidRequest,
            ProviderError::Timeout => ErrorCode::ProviderTimeout,
            ProviderError::RateLimited => ErrorCode::ProviderRateLimited,
            ProviderError::Unavailable(_) => ErrorCode::ProviderUnavailable,
            ProviderError::Rejected { .. } => ErrorCode::ProviderRejected,
            ProviderError::MalformedResponse(_) => ErrorCode::ProviderMalformedResponse,
            ProviderError::ContentRefused(_) => ErrorCode::ContentRefused,
        }
    }
}

impl ErrorCoded for PipelineError {
    fn code(&self) -> ErrorCode {
        match self {
            PipelineError::Validation(e) => e.code(),
            PipelineError::Template(e) => e.code(),
            PipelineError::Precondition(_) => ErrorCode::PreconditionFailed,
            PipelineError::Provider { source, .. } => source.code(),
            PipelineError::ProfileUnparseable { .. } => ErrorCode::ProfileUnparseable,
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            PipelineError::Validation(e) => e.details(),
            PipelineError::Provider { layer, .. } => Some(json!({ "layer": layer })),
            PipelineError::ProfileUnparseable { attempts, last_error } => {
                Some(json!({ "attempts": attempts, "last_error": last_error }))
            }
            _ => None,
        }
    }
}

impl ErrorCoded for SessionError {
    fn code(&self) -> ErrorCode {
        match self {
            SessionError::UnknownPath(_) => ErrorCode::UnknownPath,
            SessionError::TypeMismatch { .. } => ErrorCode::TypeMismatch,
            SessionError::Validation(e) => e.code(),
            SessionError::UpstreamStale { .. } => ErrorCode::UpstreamStale,
            SessionError::UnknownImage(_) => ErrorCode::UnknownImage,
            SessionError::StaleImages => ErrorCode::StaleImages,
            SessionError::Conflict(e) => e.code(),
            SessionError::Pipeline(e) => e.code(),
            SessionError::CorruptLog(_) => ErrorCode::CorruptRevisionLog,
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            SessionError::Validation(e) => e.details(),
            SessionError::Conflict(e) => e.details(),
            SessionError::Pipeline(e) => e.details(),
            SessionError::UpstreamStale { layer, upstream } => Some(json!({ "layer": layer, "upstream": upstream })),
            _ => None,
        }
    }
}

impl ErrorCoded for AgentError {
    fn code(&self) -> ErrorCode {
        match self {
            AgentError::EmptyMessage => ErrorCode::EmptyMessage,
            AgentError::BadWindow(_) => ErrorCode::BadWindow,
            AgentError::Validation(e) => e.code(),
            AgentError::Provider(e) => e.code(),
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            AgentError::Validation(e) => e.details(),
            _ => None,
        }
    }
}

impl ErrorCoded for LineageError {
    fn code(&self) -> ErrorCode {
        match self {
            LineageError::SelfLoop(_) => ErrorCode::SelfLoop,
            LineageError::UnknownNode(_) => ErrorCode::UnknownNode,
            LineageError::BadLabel(_) => ErrorCode::BadLabel,
            LineageError::UnknownEdge { .. } => ErrorCode::UnknownEdge,
            LineageError::DuplicateEdge { .. } => ErrorCode::DuplicateEdge,
        }
    }
}

impl ErrorCoded for StoreError {
    fn code(&self) -> ErrorCode {
        match self {
            StoreError::Io { .. } => ErrorCode::StorageIo,
            StoreError::NotFound { .. } => ErrorCode::NotFound,
            StoreError::InvalidId(_) => ErrorCode::InvalidId,
            StoreError::Conflict(e) => e.code(),
            StoreError::CorruptEntity { .. } => ErrorCode::CorruptEntity,
            StoreError::InvalidEntity { .. } => ErrorCode::InvalidEntity,
            StoreError::MissingBlob(_) => ErrorCode::MissingBlob,
            StoreError::InjectedFault(_) => ErrorCode::WriteInterrupted,
            StoreError::Incomplete(_) => ErrorCode::Incomplete,
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            StoreError::Conflict(e) => e.details(),
            _ => None,
        }
    }
}

impl ErrorCoded for BundleError {
    fn code(&self) -> ErrorCode {
        match self {
            BundleError::Store(e) => e.code(),
            BundleError::SchemaMismatch { .. } => ErrorCode::SchemaMismatch,
            BundleError::CorruptBundle(_) => ErrorCode::CorruptBundle,
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            BundleError::Store(e) => e.details(),
            BundleError::SchemaMismatch { found, .. } => Some(json!({ "found": found })),
            BundleError::CorruptBundle(_) => None,
        }
    }
}
