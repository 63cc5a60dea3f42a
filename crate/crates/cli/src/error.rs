use charforge_core::{ErrorCode, ErrorCoded};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Wire form of every failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn with_code(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { http_status: code.http_status(), code: code.as_str().to_owned(), message: message.into(), details: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::with_code(ErrorCode::BadRequest, message)
    }

    pub fn from_coded(err: &dyn ErrorCoded) -> Self {
        let code = err.code();
        Self {
            http_status: code.http_status(),
            code: code.as_str().to_owned(),
            message: err.to_string(),
            details: err.details(),
        }
    }
}

impl<E: ErrorCoded> From<E> for ApiError {
    fn from(err: E) -> Self {
        ApiError::from_coded(&err)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.http_status, self.message)
    }
}
