//! Versioned human-in-the-loop generation sessions.
//!
//! Every mutation returns a new session and appends [`Revision`]s. All state
//! changes go through one `apply` step, so replaying the revision log from an
//! empty session reproduces the session exactly.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::error::ConflictError;
use crate::model::{
    validate_profile, validate_spec, CharacterProfile, CharacterSpec, ImageId, ImagePrompt, KeywordSet, Layer,
    ProfileField, ReferenceImage, SpecField, ValidationError,
};
use crate::pipeline::{Pipeline, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    User,
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionOp {
    Create,
    Edit,
    Regenerate,
    Select,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub seq: u64,
    pub actor: Actor,
    pub op: RevisionOp,
    pub path: String,
    pub before: Value,
    pub after: Value,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown field path {0:?}")]
    UnknownPath(String),
    #[error("{path} expects {expected}")]
    TypeMismatch { path: String, expected: &'static str },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("cannot regenerate {layer}: {upstream} is missing or stale")]
    UpstreamStale { layer: Layer, upstream: Layer },
    #[error("image {0} is not among the session's images")]
    UnknownImage(ImageId),
    #[error("images are stale; regenerate them before selecting")]
    StaleImages,
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("revision log invalid: {0}")]
    CorruptLog(String),
}

/// A field a designer may edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldPath {
    Spec(SpecField),
    Profile(ProfileField),
    Keywords,
}

impl FieldPath {
    pub fn parse(path: &str) -> Option<Self> {
        if path == "keywords" {
            return Some(FieldPath::Keywords);
        }
        let (head, field) = path.split_once('.')?;
        match head {
            "spec" => SpecField::parse(field).map(FieldPath::Spec),
            "profile" => ProfileField::parse(field).map(FieldPath::Profile),
            _ => None,
        }
    }

    /// The derived layer this path belongs to; `None` for spec fields.
    pub fn layer(self) -> Option<Layer> {
        match self {
            FieldPath::Spec(_) => None,
            FieldPath::Profile(_) => Some(Layer::Profile),
            FieldPath::Keywords => Some(Layer::Keywords),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSession {
    session_id: String,
    spec: CharacterSpec,
    profile: Option<CharacterProfile>,
    keywords: Option<KeywordSet>,
    image_prompt: Option<ImagePrompt>,
    images: Vec<ReferenceImage>,
    selected_image_id: Option<ImageId>,
    stale: BTreeSet<Layer>,
    revisions: Vec<Revision>,
}

fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("session values serialize")
}

fn from_value<T: serde::de::DeserializeOwned>(path: &str, value: &Value) -> Result<T, SessionError> {
    serde_json::from_value(value.clone()).map_err(|e| SessionError::CorruptLog(format!("{path}: {e}")))
}

impl GenerationSession {
    /// Fresh session with a random id.
    pub fn create(spec: CharacterSpec, clock: &dyn Clock) -> Result<Self, SessionError> {
        Self::create_with_id(uuid::Uuid::new_v4().simple().to_string(), spec, clock)
    }

    pub fn create_with_id(session_id: impl Into<String>, spec: CharacterSpec, clock: &dyn Clock) -> Result<Self, SessionError> {
        validate_spec(&spec).into_result()?;
        let mut session = Self::empty(session_id.into());
        session.record(Actor::User, RevisionOp::Create, "spec", to_value(&spec), clock.now())?;
        Ok(session)
    }

    fn empty(session_id: String) -> Self {
        Self {
            session_id,
            spec: CharacterSpec {
                name: String::new(),
                role_details: String::new(),
                background_story: String::new(),
                game_type: String::new(),
                render_style: String::new(),
            },
            profile: None,
            keywords: None,
            image_prompt: None,
            images: Vec::new(),
            selected_image_id: None,
            stale: Layer::ALL.into_iter().collect(),
            revisions: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn spec(&self) -> &CharacterSpec {
        &self.spec
    }

    pub fn profile(&self) -> Option<&CharacterProfile> {
        self.profile.as_ref()
    }

    pub fn keywords(&self) -> Option<&KeywordSet> {
        self.keywords.as_ref()
    }

    pub fn image_prompt(&self) -> Option<&ImagePrompt> {
        self.image_prompt.as_ref()
    }

    pub fn images(&self) -> &[ReferenceImage] {
        &self.images
    }

    pub fn selected_image_id(&self) -> Option<&ImageId> {
        self.selected_image_id.as_ref()
    }

    pub fn selected_image(&self) -> Option<&ReferenceImage> {
        let id = self.selected_image_id.as_ref()?;
        self.images.iter().find(|i| &i.image_id == id)
    }

    pub fn stale(&self) -> &BTreeSet<Layer> {
        &self.stale
    }

    pub fn is_stale(&self, layer: Layer) -> bool {
        self.stale.contains(&layer)
    }

    pub fn revisions(&self) -> &[Revision] {
        &self.revisions
    }

    pub fn revision_count(&self) -> u64 {
        self.revisions.len() as u64
    }

    /// Optimistic concurrency check against the revision count.
    pub fn expect_revision(&self, expected: u64) -> Result<(), ConflictError> {
        let actual = self.revision_count();
        if expected == actual {
            Ok(())
        } else {
            Err(ConflictError::new("session", &self.session_id, expected, actual))
        }
    }

    fn has_layer(&self, layer: Layer) -> bool {
        match layer {
            Layer::Profile => self.profile.is_some(),
            Layer::Keywords => self.keywords.is_some(),
            Layer::Images => !self.images.is_empty(),
        }
    }

    /// Sets `path` to `after` and updates staleness. The only place session state changes.
    fn apply(&mut self, op: RevisionOp, path: &str, after: &Value) -> Result<(), SessionError> {
        match op {
            RevisionOp::Create => {
                if path != "spec" || !self.revisions.is_empty() {
                    return Err(SessionError::CorruptLog("create must be the first revision".into()));
                }
                let id = std::mem::take(&mut self.session_id);
                *self = Self::empty(id);
                self.spec = from_value(path, after)?;
            }
            RevisionOp::Edit => {
                let field = FieldPath::parse(path).ok_or_else(|| SessionError::UnknownPath(path.into()))?;
                match field {
                    FieldPath::Spec(f) => *self.spec.field_mut(f) = from_value(path, after)?,
                    FieldPath::Profile(f) => {
                        let profile = self.profile.as_mut().ok_or_else(|| SessionError::UnknownPath(path.into()))?;
                        *profile.field_mut(f) = from_value(path, after)?;
                    }
                    FieldPath::Keywords => self.keywords = Some(from_value(path, after)?),
                }
                match field.layer() {
                    None => self.stale.extend(Layer::ALL),
                    Some(layer) => {
                        self.stale.extend(layer.downstream());
                        let upstream_fresh = layer.upstream().is_none_or(|up| !self.stale.contains(&up));
                        if upstream_fresh {
                            self.stale.remove(&layer);
                        }
                    }
                }
            }
            RevisionOp::Regenerate => match path {
                "profile" => {
                    self.profile = Some(from_value(path, after)?);
                    self.mark_regenerated(Layer::Profile);
                }
                "keywords" => {
                    self.keywords = Some(from_value(path, after)?);
                    self.mark_regenerated(Layer::Keywords);
                }
                "image_prompt" => self.image_prompt = Some(from_value(path, after)?),
                "images" => {
                    self.images = from_value(path, after)?;
                    self.selected_image_id = None;
                    self.mark_regenerated(Layer::Images);
                }
                _ => return Err(SessionError::UnknownPath(path.into())),
            },
            RevisionOp::Select => {
                if path != "selected_image_id" {
                    return Err(SessionError::UnknownPath(path.into()));
                }
                self.selected_image_id = from_value(path, after)?;
            }
        }
        Ok(())
    }

    fn mark_regenerated(&mut self, layer: Layer) {
        self.stale.remove(&layer);
        self.stale.extend(layer.downstream());
    }

    fn current_value(&self, path: &str) -> Value {
        match path {
            "spec" => Value::Null,
            "profile" => to_value(&self.profile),
            "keywords" => to_value(&self.keywords),
            "image_prompt" => to_value(&self.image_prompt),
            "images" => to_value(&self.images),
            "selected_image_id" => to_value(&self.selected_image_id),
            _ => match FieldPath::parse(path) {
                Some(FieldPath::Spec(f)) => Value::from(self.spec.field(f)),
                Some(FieldPath::Profile(f)) => self.profile.as_ref().map_or(Value::Null, |p| Value::from(p.field(f))),
                _ => Value::Null,
            },
        }
    }

    fn record(
        &mut self,
        actor: Actor,
        op: RevisionOp,
        path: &str,
        after: Value,
        timestamp: DateTime<Utc>,
    ) -> Result<(), SessionError> {
        let before = self.current_value(path);
        self.apply(op, path, &after)?;
        self.revisions.push(Revision {
            seq: self.revisions.len() as u64,
            actor,
            op,
            path: path.to_owned(),
            before,
            after,
            timestamp,
        });
        Ok(())
    }

    /// Sets one spec, profile or keyword field. Downstream layers become stale.
    pub fn edit_field(&self, path: &str, value: &Value, clock: &dyn Clock) -> Result<Self, SessionError> {
        let field = FieldPath::parse(path).ok_or_else(|| SessionError::UnknownPath(path.into()))?;
        let mut candidate = self.clone();
        match field {
            FieldPath::Spec(f) => {
                let text = value.as_str().ok_or(SessionError::TypeMismatch { path: path.into(), expected: "a string" })?;
                *candidate.spec.field_mut(f) = text.to_owned();
                validate_spec(&candidate.spec).into_result()?;
            }
            FieldPath::Profile(f) => {
                let text = value.as_str().ok_or(SessionError::TypeMismatch { path: path.into(), expected: "a string" })?;
                let profile = candidate.profile.as_mut().ok_or_else(|| SessionError::UnknownPath(path.into()))?;
                *profile.field_mut(f) = text.to_owned();
                validate_profile(profile).into_result()?;
            }
            FieldPath::Keywords => {
                if candidate.keywords.is_none() {
                    return Err(SessionError::UnknownPath(path.into()));
                }
                let tokens: Vec<String> = serde_json::from_value(value.clone()).map_err(|_| SessionError::TypeMismatch {
                    path: path.into(),
                    expected: "an array of strings",
                })?;
                KeywordSet::new(tokens)?;
            }
        }
        let mut next = self.clone();
        next.record(Actor::User, RevisionOp::Edit, path, value.clone(), clock.now())?;
        Ok(next)
    }

    /// Recomputes `layer` and everything downstream of it.
    pub fn regenerate(&self, layer: Layer, pipeline: &Pipeline, clock: &dyn Clock) -> Result<Self, SessionError> {
        if let Some(upstream) = layer.upstream() {
            if !self.has_layer(upstream) || self.is_stale(upstream) {
                return Err(SessionError::UpstreamStale { layer, upstream });
            }
        }
        let mut next = self.clone();
        if layer == Layer::Profile {
            let outcome = pipeline.profile(&next.spec, None)?;
            let profile = outcome.profile.expect("accepted outcome has a profile");
            next.record(Actor::Pipeline, RevisionOp::Regenerate, "profile", to_value(&profile), clock.now())?;
        }
        if layer <= Layer::Keywords {
            let profile = next.profile.as_ref().expect("profile present");
            let keywords = pipeline.keywords(profile)?;
            next.record(Actor::Pipeline, RevisionOp::Regenerate, "keywords", to_value(&keywords), clock.now())?;
        }
        let keywords = next.keywords.as_ref().expect("keywords present");
        let prompt = pipeline.image_prompt(keywords, &next.spec)?;
        let images = pipeline.images(&prompt)?;
        next.record(Actor::Pipeline, RevisionOp::Regenerate, "image_prompt", to_value(&prompt), clock.now())?;
        next.record(Actor::Pipeline, RevisionOp::Regenerate, "images", to_value(&images), clock.now())?;
        Ok(next)
    }

    pub fn select_image(&self, image_id: &ImageId, clock: &dyn Clock) -> Result<Self, SessionError> {
        if self.is_stale(Layer::Images) {
            return Err(SessionError::StaleImages);
        }
        if !self.images.iter().any(|i| &i.image_id == image_id) {
            return Err(SessionError::UnknownImage(image_id.clone()));
        }
        let mut next = self.clone();
        next.record(Actor::User, RevisionOp::Select, "selected_image_id", to_value(&Some(image_id)), clock.now())?;
        Ok(next)
    }

    /// Rebuilds a session by applying `revisions` to an empty one.
    pub fn replay(session_id: impl Into<String>, revisions: &[Revision]) -> Result<Self, SessionError> {
        let mut session = Self::empty(session_id.into());
        for (i, revision) in revisions.iter().enumerate() {
            if revision.seq != i as u64 {
                return Err(SessionError::CorruptLog(format!("revision {i} has seq {}", revision.seq)));
            }
            session.apply(revision.op, &revision.path, &revision.after)?;
            session.revisions.push(revision.clone());
        }
        if session.revisions.is_empty() {
            return Err(SessionError::CorruptLog("empty revision log".into()));
        }
        Ok(session)
    }

    /// Structural invariants; violated only by hand-edited or corrupted data.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(id) = &self.selected_image_id {
            if !self.images.iter().any(|i| &i.image_id == id) {
                return Err(format!("selected image {id} not among images"));
            }
        }
        for layer in Layer::ALL {
            if self.is_stale(layer) && layer.downstream().any(|d| !self.is_stale(d)) {
                return Err(format!("stale set not downward closed at {layer}"));
            }
            if !self.has_layer(layer) && !self.is_stale(layer) {
                return Err(format!("{layer} absent but not stale"));
            }
        }
        if self.revisions.is_empty() {
            return Err("empty revision log".into());
        }
        for (i, revision) in self.revisions.iter().enumerate() {
            if revision.seq != i as u64 {
                return Err(format!("revision {i} has seq {}", revision.seq));
            }
        }
        validate_spec(&self.spec).into_result().map_err(|e| e.to_string())?;
        for image in &self.images {
            image.verify()?;
        }
        Ok(())
    }

    /// True when profile, keywords and images are present, fresh and an image is selected.
    pub fn is_complete(&self) -> bool {
        self.stale.is_empty() && self.profile.is_some() && self.keywords.is_some() && self.selected_image().is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::pipeline::template::TemplateSet;
    use crate::provider::ProviderHandle;
    use serde_json::json;

    fn spec() -> CharacterSpec {
        CharacterSpec {
            name: String::new(),
            role_details: "a street-smart courier".into(),
            background_story: "grew up in the undercity".into(),
            game_type: "cyberpunk-style, open-world game".into(),
            render_style: "neon comic".into(),
        }
    }

    fn pipeline() -> Pipeline {
        Pipeline::new(ProviderHandle::mock(7), TemplateSet::builtin()).with_image_size(8, 8)
    }

    fn generated() -> GenerationSession {
        let clock = FixedClock::epoch();
        GenerationSession::create(spec(), &clock)
            .unwrap()
            .regenerate(Layer::Profile, &pipeline(), &clock)
            .unwrap()
    }

    fn stale(s: &GenerationSession) -> Vec<Layer> {
        s.stale().iter().copied().collect()
    }

    #[test]
    fn create_starts_fully_stale() {
        let clock = FixedClock::epoch();
        let a = GenerationSession::create(spec(), &clock).unwrap();
        let b = GenerationSession::create(spec(), &clock).unwrap();
        assert_eq!(stale(&a), Layer::ALL);
        assert!(a.images().is_empty());
        assert_eq!(a.revision_count(), 1);
        assert_ne!(a.session_id(), b.session_id());
        let mut bad = spec();
        bad.render_style.clear();
        assert!(matches!(GenerationSession::create(bad, &clock), Err(SessionError::Validation(_))));
    }

    #[test]
    fn regenerate_profile_cascades() {
        let s = generated();
        assert!(s.stale().is_empty());
        assert_eq!(s.images().len(), 5);
        assert_eq!(s.revision_count(), 5);
        s.check_invariants().unwrap();
    }

    #[test]
    fn edit_staleness() {
        let clock = FixedClock::epoch();
        let s = generated();
        let e = s.edit_field("spec.render_style", &json!("ink wash"), &clock).unwrap();
        assert_eq!(stale(&e), Layer::ALL);
        let e = s.edit_field("profile.weapon", &json!("a rusted pipe"), &clock).unwrap();
        assert_eq!(stale(&e), [Layer::Keywords, Layer::Images]);
        let e = s.edit_field("keywords", &json!(["a", "b", "c", "d", "e"]), &clock).unwrap();
        assert_eq!(stale(&e), [Layer::Images]);
    }

    #[test]
    fn edit_errors() {
        let clock = FixedClock::epoch();
        let s = generated();
        assert!(matches!(s.edit_field("profile.height", &json!("x"), &clock), Err(SessionError::UnknownPath(_))));
        assert!(matches!(s.edit_field("spec.name", &json!(3), &clock), Err(SessionError::TypeMismatch { .. })));
        let long = vec!["word"; 151].join(" ");
        assert!(matches!(
            s.edit_field("profile.background_story", &json!(long), &clock),
            Err(SessionError::Validation(_))
        ));
        assert!(matches!(s.edit_field("keywords", &json!(["a"]), &clock), Err(SessionError::Validation(_))));
        let fresh = GenerationSession::create(spec(), &clock).unwrap();
        assert!(matches!(fresh.edit_field("profile.age", &json!("9"), &clock), Err(SessionError::UnknownPath(_))));
    }

    #[test]
    fn regenerate_requires_fresh_upstream() {
        let clock = FixedClock::epoch();
        let s = generated()
            .edit_field("spec.game_type", &json!("roguelike"), &clock)
            .unwrap();
        assert!(matches!(
            s.regenerate(Layer::Keywords, &pipeline(), &clock),
            Err(SessionError::UpstreamStale { layer: Layer::Keywords, upstream: Layer::Profile })
        ));
    }

    #[test]
    fn selection_rules() {
        let clock = FixedClock::epoch();
        let s = generated();
        let first = s.images()[0].image_id.clone();
        let selected = s.select_image(&first, &clock).unwrap();
        assert_eq!(selected.selected_image_id(), Some(&first));

        let edited = selected.edit_field("keywords", &json!(["red", "scarf", "goggles", "boots", "grin"]), &clock).unwrap();
        assert!(matches!(edited.select_image(&first, &clock), Err(SessionError::StaleImages)));
        let regenerated = edited.regenerate(Layer::Images, &pipeline(), &clock).unwrap();
        assert_eq!(regenerated.selected_image_id(), None);
        assert_eq!(regenerated.images().len(), 5);
        assert!(matches!(regenerated.select_image(&first, &clock), Err(SessionError::UnknownImage(_))));
    }

    #[test]
    fn replay_reproduces_session() {
        let clock = FixedClock::epoch();
        let s = generated()
            .edit_field("profile.age", &json!("31"), &clock)
            .unwrap()
            .regenerate(Layer::Keywords, &pipeline(), &clock)
            .unwrap();
        let s = s.select_image(&s.images()[2].image_id.clone(), &clock).unwrap();
        assert_eq!(GenerationSession::replay(s.session_id(), s.revisions()).unwrap(), s);
    }

    #[test]
    fn conflict_on_stale_revision_count() {
        let s = generated();
        assert!(s.expect_revision(s.revision_count()).is_ok());
        let err = s.expect_revision(1).unwrap_err();
        assert_eq!((err.expected, err.actual), (1, 5));
    }

    #[test]
    fn failed_regeneration_leaves_session_untouched() {
        use crate::provider::mock::PromptTask;
        use crate::provider::scripted::ScriptedBackend;
        use crate::provider::{ProviderError, RetryPolicy};
        use std::sync::Arc;

        let clock = FixedClock::epoch();
        let s = generated();
        let backend = Arc::new(
            ScriptedBackend::new(7).answering(PromptTask::Keywords, Err(ProviderError::RateLimited)),
        );
        let failing = Pipeline::new(ProviderHandle::with_backend(backend, RetryPolicy::immediate(0), 1), TemplateSet::builtin());
        assert!(matches!(s.regenerate(Layer::Profile, &failing, &clock), Err(SessionError::Pipeline(_))));
        assert_eq!(s.revision_count(), 5);
    }
}
