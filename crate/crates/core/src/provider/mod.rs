//! Uniform access to text and image generation backends.
//!
//! A [`ProviderHandle`] wraps a [`Backend`] with request validation, bounded
//! in-flight concurrency and retry with exponential backoff. Backends are either
//! the offline [`mock::MockBackend`] or an HTTP [`remote::RemoteBackend`].

pub mod mock;
pub mod remote;
pub mod retry;
pub mod scripted;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::ReferenceImage;
pub use retry::RetryPolicy;

pub const ENV_API_BASE: &str = "CHARFORGE_API_BASE";
pub const ENV_API_KEY: &str = "CHARFORGE_API_KEY";
pub const ENV_TEXT_MODEL: &str = "CHARFORGE_TEXT_MODEL";
pub const ENV_IMAGE_MODEL: &str = "CHARFORGE_IMAGE_MODEL";

pub const MAX_RETRIES_LIMIT: u32 = 5;
pub const MAX_IMAGES_PER_REQUEST: u32 = 10;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Mock,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Remote => "remote",
            ProviderKind::Mock => "mock",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_ref: Option<String>,
    pub text_model: String,
    pub image_model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    #[serde(default)]
    pub mock_seed: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Optional JSON file overriding remote wire field names.
    #[serde(default)]
    pub wire_mapping: Option<PathBuf>,
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl ProviderConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            kind: ProviderKind::Mock,
            base_url: None,
            api_key_ref: None,
            text_model: "mock-text".into(),
            image_model: "mock-image".into(),
            timeout_secs: 30.0,
            max_retries: 3,
            mock_seed: seed,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            wire_mapping: None,
        }
    }

    pub fn remote(base_url: impl Into<String>, api_key_ref: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            base_url: Some(base_url.into()),
            api_key_ref: Some(api_key_ref.into()),
            text_model: "gpt-4o-mini".into(),
            image_model: "dall-e-3".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            mock_seed: 0,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            wire_mapping: None,
        }
    }

    /// Remote when both `CHARFORGE_API_BASE` and `CHARFORGE_API_KEY` are set, mock otherwise.
    pub fn from_env(mock_seed: u64) -> Self {
        let base = std::env::var(ENV_API_BASE).ok().filter(|v| !v.trim().is_empty());
        let has_key = std::env::var(ENV_API_KEY).map(|v| !v.is_empty()).unwrap_or(false);
        match base {
            Some(base) if has_key => {
                let mut config = Self::remote(base, ENV_API_KEY);
                if let Ok(model) = std::env::var(ENV_TEXT_MODEL) {
                    config.text_model = model;
                }
                if let Ok(model) = std::env::var(ENV_IMAGE_MODEL) {
                    config.image_model = model;
                }
                config
            }
            _ => Self::mock(mock_seed),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ProviderError::Config("timeout must be positive".into()));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(ProviderError::Config(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if self.max_in_flight == 0 {
            return Err(ProviderError::Config("max_in_flight must be at least 1".into()));
        }
        if self.kind == ProviderKind::Remote {
            if self.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
                return Err(ProviderError::Config("remote provider requires base_url".into()));
            }
            if self.api_key_ref.as_deref().is_none_or(|u| u.trim().is_empty()) {
                return Err(ProviderError::Config("remote provider requires api_key_ref".into()));
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f32,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self { messages, max_tokens: 512, temperature: 0.7 }
    }

    pub fn with_limits(mut self, max_tokens: u32, temperature: f32) -> Self {
        self.max_tokens = max_tokens;
        self.temperature = temperature;
        self
    }

    /// At most one leading system message, then non-system messages with no
    /// role repeated back to back, ending on a user message.
    pub fn validate(&self) -> Result<(), ProviderError> {
        let invalid = |msg: &str| Err(ProviderError::InvalidRequest(msg.to_owned()));
        if self.messages.is_empty() {
            return invalid("messages must not be empty");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature must be within [0, 2]");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        let body = match self.messages.split_first() {
            Some((first, rest)) if first.role == Role::System => rest,
            _ => &self.messages[..],
        };
        if body.is_empty() {
            return invalid("request needs at least one non-system message");
        }
        if body.iter().any(|m| m.role == Role::System) {
            return invalid("system message only allowed first");
        }
        if body.windows(2).any(|w| w[0].role == w[1].role) {
            return invalid("consecutive messages share a role");
        }
        if body.last().map(|m| m.role) != Some(Role::User) {
            return invalid("last message must come from the user");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextResult {
    pub content: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub prompt: String,
    pub count: u32,
    pub width: u32,
    pub height: u32,
}

impl ImageRequest {
    pub fn new(prompt: impl Into<String>, count: u32, (width, height): (u32, u32)) -> Self {
        Self { prompt: prompt.into(), count, width, height }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("image prompt must not be empty".into()));
        }
        if !(1..=MAX_IMAGES_PER_REQUEST).contains(&self.count) {
            return Err(ProviderError::InvalidRequest(format!(
                "image count {} outside 1..={MAX_IMAGES_PER_REQUEST}",
                self.count
            )));
        }
        if !(1..=4096).contains(&self.width) || !(1..=4096).contains(&self.height) {
            return Err(ProviderError::InvalidRequest(format!(
                "image size {}x{} outside 1..=4096",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("invalid provider request: {0}")]
    InvalidRequest(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider rate limited")]
    RateLimited,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider rejected request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("content refused by provider: {0}")]
    ContentRefused(String),
}

impl ProviderError {
    /// Whether another attempt may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::Timeout | ProviderError::RateLimited | ProviderError::Unavailable(_)
        )
    }
}

/// A generation backend. Implementations must be safe to call from many threads.
pub trait Backend: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn complete(&self, request: &ChatRequest) -> Result<TextResult, ProviderError>;
    fn generate_images(&self, request: &ImageRequest) -> Result<Vec<ReferenceImage>, ProviderError>;
}

struct Limiter {
    in_flight: Mutex<usize>,
    released: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(limit: usize) -> Self {
        Self { in_flight: Mutex::new(0), released: Condvar::new(), limit: limit.max(1) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.released.notify_one();
    }
}

struct HandleInner {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Limiter,
}

/// Cheaply cloneable, thread-safe entry point for all generation calls.
#[derive(Clone)]
pub struct ProviderHandle {
    inner: Arc<HandleInner>,
}

impl fmt::Debug for ProviderHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderHandle")
            .field("kind", &self.kind())
            .field("retry", &self.inner.retry)
            .field("max_in_flight", &self.inner.limiter.limit)
            .finish()
    }
}

/// Builds a handle for `config`. Remote configs need their key variable set.
pub fn make_provider(config: &ProviderConfig) -> Result<ProviderHandle, ProviderError> {
    config.validate()?;
    let backend: Arc<dyn Backend> = match config.kind {
        ProviderKind::Mock => Arc::new(mock::MockBackend::new(config.mock_seed)),
        ProviderKind::Remote => Arc::new(remote::RemoteBackend::from_config(config)?),
    };
    Ok(ProviderHandle::with_backend(
        backend,
        RetryPolicy::standard(config.max_retries),
        config.max_in_flight,
    ))
}

impl ProviderHandle {
    pub fn with_backend(backend: Arc<dyn Backend>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            inner: Arc::new(HandleInner { backend, retry, limiter: Limiter::new(max_in_flight) }),
        }
    }

    /// Offline handle with no backoff delays.
    pub fn mock(seed: u64) -> Self {
        Self::with_backend(
            Arc::new(mock::MockBackend::new(seed)),
            RetryPolicy::immediate(3),
            DEFAULT_MAX_IN_FLIGHT,
        )
    }

    pub fn kind(&self) -> ProviderKind {
        self.inner.backend.kind()
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.inner.retry
    }

    pub fn complete_text(&self, request: &ChatRequest) -> Result<TextResult, ProviderError> {
        request.validate()?;
        let result = self.with_retries(|| self.inner.backend.complete(request))?;
        if result.content.trim().is_empty() {
            return Err(ProviderError::MalformedResponse("empty completion".into()));
        }
        Ok(result)
    }

    pub fn generate_images(&self, request: &ImageRequest) -> Result<Vec<ReferenceImage>, ProviderError> {
        request.validate()?;
        let images = self.with_retries(|| self.inner.backend.generate_images(request))?;
        if images.len() != request.count as usize {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} images, got {}",
                request.count,
                images.len()
            )));
        }
        for image in &images {
            image.verify().map_err(ProviderError::MalformedResponse)?;
        }
        Ok(images)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let policy = &self.inner.retry;
        let mut retries = 0;
        loop {
            let outcome = {
                let _permit = self.inner.limiter.acquire();
                call()
            };
            match outcome {
                Err(err) if err.is_transient() && retries < policy.max_retries => {
                    policy.wait(retries);
                    retries += 1;
                }
                other => return other,
            }
        }
    }
}
