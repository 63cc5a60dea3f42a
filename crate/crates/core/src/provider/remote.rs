//! HTTP backend speaking the common chat-completion and image-generation JSON shapes.

use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Backend, ChatRequest, ImageRequest, ProviderConfig, ProviderError, ProviderKind, Role, TextResult, Usage};
use crate::model::ReferenceImage;

const MAX_BODY_BYTES: u64 = 64 * 1024 * 1024;

/// Request field names and response JSON pointers. Every field has a default
/// matching the widely deployed REST shape; a mapping file only needs the
/// entries it changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireMapping {
    pub chat_path: String,
    pub image_path: String,
    pub model_field: String,
    pub messages_field: String,
    pub max_tokens_field: String,
    pub temperature_field: String,
    pub content_pointer: String,
    pub prompt_tokens_pointer: String,
    pub completion_tokens_pointer: String,
    pub prompt_field: String,
    pub count_field: String,
    pub size_field: String,
    pub images_pointer: String,
    pub image_data_field: String,
    /// Extra constant fields merged into every image request body.
    pub image_extra: Map<String, Value>,
}

impl Default for WireMapping {
    fn default() -> Self {
        let mut image_extra = Map::new();
        image_extra.insert("response_format".into(), Value::from("b64_json"));
        Self {
            chat_path: "/chat/completions".into(),
            image_path: "/images/generations".into(),
            model_field: "model".into(),
            messages_field: "messages".into(),
            max_tokens_field: "max_tokens".into(),
            temperature_field: "temperature".into(),
            content_pointer: "/choices/0/message/content".into(),
            prompt_tokens_pointer: "/usage/prompt_tokens".into(),
            completion_tokens_pointer: "/usage/completion_tokens".into(),
            prompt_field: "prompt".into(),
            count_field: "n".into(),
            size_field: "size".into(),
            images_pointer: "/data".into(),
            image_data_field: "b64_json".into(),
            image_extra,
        }
    }
}

impl WireMapping {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("reading wire mapping {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("parsing wire mapping {}: {e}", path.display())))
    }

    pub fn chat_body(&self, model: &str, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        let mut body = Map::new();
        body.insert(self.model_field.clone(), Value::from(model));
        body.insert(self.messages_field.clone(), Value::from(messages));
        body.insert(self.max_tokens_field.clone(), Value::from(request.max_tokens));
        body.insert(self.temperature_field.clone(), Value::from(request.temperature));
        Value::Object(body)
    }

    pub fn image_body(&self, model: &str, request: &ImageRequest) -> Value {
        let mut body = self.image_extra.clone();
        body.insert(self.model_field.clone(), Value::from(model));
        body.insert(self.prompt_field.clone(), Value::from(request.prompt.as_str()));
        body.insert(self.count_field.clone(), Value::from(request.count));
        body.insert(
            self.size_field.clone(),
            Value::from(format!("{}x{}", request.width, request.height)),
        );
        Value::Object(body)
    }

    pub fn parse_chat(&self, body: &Value) -> Result<TextResult, ProviderError> {
        let content = body
            .pointer(&self.content_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::MalformedResponse(format!("no string at {}", self.content_pointer)))?;
        let count = |ptr: &str| body.pointer(ptr).and_then(Value::as_u64).unwrap_or(0) as u32;
        Ok(TextResult {
            content: content.to_owned(),
            usage: Usage {
                prompt_tokens: count(&self.prompt_tokens_pointer),
                completion_tokens: count(&self.completion_tokens_pointer),
            },
        })
    }

    pub fn parse_images(&self, body: &Value, prompt: &str) -> Result<Vec<ReferenceImage>, ProviderError> {
        let items = body
            .pointer(&self.images_pointer)
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::MalformedResponse(format!("no array at {}", self.images_pointer)))?;
        let now = chrono::Utc::now();
        items
            .iter()
            .map(|item| {
                let encoded = item
                    .get(&self.image_data_field)
                    .and_then(Value::as_str)
                    .ok_or_else(|| {
                        ProviderError::MalformedResponse(format!("image entry lacks {}", self.image_data_field))
                    })?;
                let media = base64::engine::general_purpose::STANDARD
                    .decode(encoded)
                    .map_err(|e| ProviderError::MalformedResponse(format!("image base64: {e}")))?;
                Ok(ReferenceImage::new(media, prompt, now))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    text_model: String,
    image_model: String,
    mapping: WireMapping,
}

impl RemoteBackend {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let key_var = config
            .api_key_ref
            .as_deref()
            .ok_or_else(|| ProviderError::Config("remote provider requires api_key_ref".into()))?;
        let api_key = std::env::var(key_var)
            .map_err(|_| ProviderError::Config(format!("environment variable {key_var} is not set")))?;
        let base_url = config
            .base_url
            .clone()
            .ok_or_else(|| ProviderError::Config("remote provider requires base_url".into()))?;
        let mapping = match &config.wire_mapping {
            Some(path) => WireMapping::load(path)?,
            None => WireMapping::default(),
        };
        Ok(Self::new(base_url, api_key, config, mapping, config.timeout()))
    }

    pub fn new(
        base_url: String,
        api_key: String,
        config: &ProviderConfig,
        mapping: WireMapping,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key,
            text_model: config.text_model.clone(),
            image_model: config.image_model.clone(),
            mapping,
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}{}", self.base_url, path);
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(transport_error)?;
        classify_status(status, &text)?;
        serde_json::from_str(&text).map_err(|e| ProviderError::MalformedResponse(format!("response json: {e}")))
    }
}

fn transport_error(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Unavailable(other.to_string()),
    }
}

/// Maps an HTTP status to the gateway's error taxonomy.
pub fn classify_status(status: u16, body: &str) -> Result<(), ProviderError> {
    let lower = body.to_lowercase();
    match status {
        200..=299 => Ok(()),
        429 => Err(ProviderError::RateLimited),
        408 | 504 => Err(ProviderError::Timeout),
        500..=599 => Err(ProviderError::Unavailable(format!("HTTP {status}"))),
        400 | 403 | 422
            if lower.contains("content_policy") || lower.contains("safety") || lower.contains("moderation") =>
        {
            Err(ProviderError::ContentRefused(truncate(body, 300)))
        }
        _ => Err(ProviderError::Rejected { status, message: truncate(body, 300) }),
    }
}

fn truncate(text: &str, max: usize) -> String {
    text.chars().take(max).collect()
}

impl Backend for RemoteBackend {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn complete(&self, request: &ChatRequest) -> Result<TextResult, ProviderError> {
        let body = self.mapping.chat_body(&self.text_model, request);
        let response = self.post(&self.mapping.chat_path, &body)?;
        self.mapping.parse_chat(&response)
    }

    fn generate_images(&self, request: &ImageRequest) -> Result<Vec<ReferenceImage>, ProviderError> {
        let body = self.mapping.image_body(&self.image_model, request);
        let response = self.post(&self.mapping.image_path, &body)?;
        self.mapping.parse_images(&response, &request.prompt)
    }
}
