//! Three-layer hierarchical generation:
//! spec → summarized profile → keywords → image prompt → reference images.
//!
//! Layer 1 asks the text model for a labeled profile and repairs malformed
//! replies by re-asking with the violation quoted, up to three attempts in
//! total. Layer 2 sees only the layer-1 profile. Layer 3 combines the keywords
//! with the render style and role details from the original spec.

pub mod keywords;
pub mod parse;
pub mod template;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{
    validate_profile, validate_spec, CharacterProfile, CharacterSpec, ImagePrompt, KeywordSet, Layer,
    ReferenceImage, ValidationError,
};
use crate::provider::{ChatMessage, ChatRequest, ImageRequest, ProviderError, ProviderHandle};
pub use keywords::{build_keyword_prompt, parse_keyword_response};
pub use parse::{parse_profile_response, render_profile, ParseError};
use template::{
    PromptTemplate, TemplateError, TemplateLayer, TemplateSet, INVENT_NAME_TEXT, NOT_SPECIFIED_TEXT,
    PROFILE_FIELD_LIST, TAKEN_NAMES_MARKER, WORD_LIMIT_TEXT,
};

pub const REFERENCE_IMAGE_COUNT: u32 = 5;
pub const MAX_SUMMARY_ATTEMPTS: u32 = 3;
pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (512, 512);

const SUMMARY_SYSTEM: &str = "You are an imaginative, concise writer of game character profiles.";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{layer} layer failed: {source}")]
    Provider {
        layer: Layer,
        #[source]
        source: ProviderError,
    },
    #[error("profile still invalid after {attempts} attempts: {last_error}")]
    ProfileUnparseable { attempts: u32, last_error: ParseError },
}

impl PipelineError {
    /// The generation layer that failed, when the failure came from one.
    pub fn layer(&self) -> Option<Layer> {
        match self {
            PipelineError::Provider { layer, .. } => Some(*layer),
            PipelineError::ProfileUnparseable { .. } => Some(Layer::Profile),
            _ => None,
        }
    }

    fn provider(layer: Layer) -> impl FnOnce(ProviderError) -> PipelineError {
        move |source| PipelineError::Provider { layer, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Repaired,
    Failed,
}

/// Result of the layer-1 summary including every raw reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub status: ParseStatus,
    pub profile: Option<CharacterProfile>,
    pub attempts: u32,
    pub raw_transcripts: Vec<String>,
    /// Parse failures in attempt order.
    pub errors: Vec<ParseError>,
}

/// Extra instructions for one member of a batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariantHint {
    pub index: usize,
    pub total: usize,
    pub taken_names: Vec<String>,
    pub retry: u32,
}

impl VariantHint {
    pub fn instruction(&self) -> String {
        let mut text = format!(
            "This is variant {} of {}: vary name and details while keeping the game type and render style.",
            self.index, self.total
        );
        if !self.taken_names.is_empty() {
            text.push_str(&format!("\n{TAKEN_NAMES_MARKER}: {}", self.taken_names.join(", ")));
        }
        if self.retry > 0 {
            text.push_str(&format!("\nAttempt {}: pick a name that is not already taken.", self.retry + 1));
        }
        text
    }
}

fn or_placeholder(text: &str, placeholder: &str) -> String {
    if text.trim().is_empty() {
        placeholder.to_owned()
    } else {
        text.to_owned()
    }
}

/// Layer-1 request: the rendered summary template embedding every spec field.
pub fn build_summary_prompt(spec: &CharacterSpec, template: &PromptTemplate) -> Result<ChatRequest, PipelineError> {
    build_summary_prompt_variant(spec, template, None)
}

pub fn build_summary_prompt_variant(
    spec: &CharacterSpec,
    template: &PromptTemplate,
    variant: Option<&VariantHint>,
) -> Result<ChatRequest, PipelineError> {
    if template.layer != TemplateLayer::Summary {
        return Err(TemplateError::WrongLayer {
            template_id: template.template_id.clone(),
            expected: TemplateLayer::Summary,
            found: template.layer,
        }
        .into());
    }
    validate_spec(spec).into_result()?;
    let values = BTreeMap::from([
        ("name", or_placeholder(&spec.name, INVENT_NAME_TEXT)),
        ("role_details", or_placeholder(&spec.role_details, NOT_SPECIFIED_TEXT)),
        ("background_story", or_placeholder(&spec.background_story, NOT_SPECIFIED_TEXT)),
        ("game_type", spec.game_type.clone()),
        ("render_style", spec.render_style.clone()),
    ]);
    let mut prompt = template.render(&values)?;
    if let Some(variant) = variant {
        prompt.push_str("\n\n");
        prompt.push_str(&variant.instruction());
    }
    Ok(ChatRequest::new(vec![ChatMessage::system(SUMMARY_SYSTEM), ChatMessage::user(prompt)]).with_limits(700, 0.8))
}

fn repair_message(error: &ParseError) -> String {
    format!(
        "Your previous reply was rejected: {error}. Rewrite the whole profile with the labeled sections \
         {PROFILE_FIELD_LIST}, one per line as \"Label: text\". The background story must be {WORD_LIMIT_TEXT}."
    )
}

pub fn summarize_profile(
    spec: &CharacterSpec,
    provider: &ProviderHandle,
    templates: &TemplateSet,
) -> Result<ParseOutcome, PipelineError> {
    summarize_profile_variant(spec, provider, templates, None)
}

/// Runs layer 1 with repair retries. Provider errors propagate; exhausting the
/// attempt budget yields `status = failed` rather than an error.
pub fn summarize_profile_variant(
    spec: &CharacterSpec,
    provider: &ProviderHandle,
    templates: &TemplateSet,
    variant: Option<&VariantHint>,
) -> Result<ParseOutcome, PipelineError> {
    let mut request = build_summary_prompt_variant(spec, &templates.summary, variant)?;
    let mut raw_transcripts = Vec::new();
    let mut errors = Vec::new();
    for attempt in 1..=MAX_SUMMARY_ATTEMPTS {
        let reply = provider
            .complete_text(&request)
            .map_err(PipelineError::provider(Layer::Profile))?;
        raw_transcripts.push(reply.content.clone());
        match parse_profile_response(&reply.content) {
            Ok(profile) => {
                let status = if attempt == 1 { ParseStatus::Ok } else { ParseStatus::Repaired };
                return Ok(ParseOutcome { status, profile: Some(profile), attempts: attempt, raw_transcripts, errors });
            }
            Err(err) => {
                request.messages.push(ChatMessage::assistant(reply.content));
                request.messages.push(ChatMessage::user(repair_message(&err)));
                errors.push(err);
            }
        }
    }
    Ok(ParseOutcome {
        status: ParseStatus::Failed,
        profile: None,
        attempts: MAX_SUMMARY_ATTEMPTS,
        raw_transcripts,
        errors,
    })
}

/// Layer 2: keywords derived from the profile alone.
pub fn extract_keywords(
    profile: &CharacterProfile,
    provider: &ProviderHandle,
    templates: &TemplateSet,
) -> Result<KeywordSet, PipelineError> {
    validate_profile(profile).into_result()?;
    let request = build_keyword_prompt(profile, &templates.keywords)?;
    let reply = provider
        .complete_text(&request)
        .map_err(PipelineError::provider(Layer::Keywords))?;
    Ok(keywords::keywords_from_response(&reply.content, profile))
}

/// Layer 3 prompt from the shipped image template.
pub fn build_image_prompt(
    keywords: &KeywordSet,
    render_style: &str,
    role_details: &str,
) -> Result<ImagePrompt, PipelineError> {
    build_image_prompt_with(&TemplateSet::builtin().image, keywords, render_style, role_details)
}

/// Fills render style, role details and comma-joined keywords into `template`.
/// An empty role details segment is dropped along with its separator.
pub fn build_image_prompt_with(
    template: &PromptTemplate,
    keywords: &KeywordSet,
    render_style: &str,
    role_details: &str,
) -> Result<ImagePrompt, PipelineError> {
    let render_style = render_style.trim();
    let role_details = role_details.trim();
    if render_style.is_empty() {
        return Err(PipelineError::Precondition("render_style must not be empty".into()));
    }
    let values = BTreeMap::from([
        ("render_style", render_style.to_owned()),
        ("role_details", role_details.to_owned()),
        ("keywords", keywords.joined()),
    ]);
    let mut assembled = template.render(&values)?;
    if role_details.is_empty() {
        assembled = assembled.replacen(&format!("{render_style}, , "), &format!("{render_style}, "), 1);
    }
    Ok(ImagePrompt {
        keywords: keywords.clone(),
        render_style: render_style.to_owned(),
        role_details: role_details.to_owned(),
        assembled,
    })
}

pub fn generate_reference_images(
    prompt: &ImagePrompt,
    provider: &ProviderHandle,
    size: (u32, u32),
) -> Result<Vec<ReferenceImage>, PipelineError> {
    let request = ImageRequest::new(prompt.assembled.clone(), REFERENCE_IMAGE_COUNT, size);
    provider
        .generate_images(&request)
        .map_err(PipelineError::provider(Layer::Images))
}

/// Every intermediate of one full run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub summary: ParseOutcome,
    pub profile: CharacterProfile,
    pub keywords: KeywordSet,
    pub image_prompt: ImagePrompt,
    pub images: Vec<ReferenceImage>,
}

/// A provider, a template catalog and an image size: everything a run needs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    provider: ProviderHandle,
    templates: Arc<TemplateSet>,
    image_size: (u32, u32),
}

impl Pipeline {
    pub fn new(provider: ProviderHandle, templates: TemplateSet) -> Self {
        Self { provider, templates: Arc::new(templates), image_size: DEFAULT_IMAGE_SIZE }
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Self {
        self.image_size = (width, height);
        self
    }

    pub fn provider(&self) -> &ProviderHandle {
        &self.provider
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// Layer 1; a failed outcome becomes [`PipelineError::ProfileUnparseable`].
    pub fn profile(&self, spec: &CharacterSpec, variant: Option<&VariantHint>) -> Result<ParseOutcome, PipelineError> {
        let outcome = summarize_profile_variant(spec, &self.provider, &self.templates, variant)?;
        if outcome.status == ParseStatus::Failed {
            let last_error = outcome.errors.last().cloned().expect("failed outcome records its errors");
            return Err(PipelineError::ProfileUnparseable { attempts: outcome.attempts, last_error });
        }
        Ok(outcome)
    }

    pub fn keywords(&self, profile: &CharacterProfile) -> Result<KeywordSet, PipelineError> {
        extract_keywords(profile, &self.provider, &self.templates)
    }

    pub fn image_prompt(&self, keywords: &KeywordSet, spec: &CharacterSpec) -> Result<ImagePrompt, PipelineError> {
        build_image_prompt_with(&self.templates.image, keywords, &spec.render_style, &spec.role_details)
    }

    pub fn images(&self, prompt: &ImagePrompt) -> Result<Vec<ReferenceImage>, PipelineError> {
        generate_reference_images(prompt, &self.provider, self.image_size)
    }

    /// Layers 1 → 2 → 3 strictly in order; the first failure aborts the run.
    pub fn run(&self, spec: &CharacterSpec) -> Result<PipelineResult, PipelineError> {
        self.run_variant(spec, None)
    }

    pub fn run_variant(&self, spec: &CharacterSpec, variant: Option<&VariantHint>) -> Result<PipelineResult, PipelineError> {
        validate_spec(spec).into_result()?;
        let summary = self.profile(spec, variant)?;
        let profile = summary.profile.clone().expect("successful outcome has a profile");
        self.finish(spec, summary, profile)
    }

    /// Layers 2 and 3 for an already-accepted profile.
    pub fn finish(
        &self,
        spec: &CharacterSpec,
        summary: ParseOutcome,
        profile: CharacterProfile,
    ) -> Result<PipelineResult, PipelineError> {
        let keywords = self.keywords(&profile)?;
        let image_prompt = self.image_prompt(&keywords, spec)?;
        let images = self.images(&image_prompt)?;
        Ok(PipelineResult { summary, profile, keywords, image_prompt, images })
    }
}

pub fn run_pipeline(
    spec: &CharacterSpec,
    provider: &ProviderHandle,
    templates: &TemplateSet,
) -> Result<PipelineResult, PipelineError> {
    Pipeline::new(provider.clone(), templates.clone()).run(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::word_count;
    use crate::provider::mock::PromptTask;
    use crate::provider::scripted::{RecordedCall, ScriptedBackend};
    use crate::provider::{RetryPolicy, Role};

    fn ahab_spec() -> CharacterSpec {
        CharacterSpec {
            name: "Ahab".into(),
            role_details: "a master character, obsessed sea captain".into(),
            background_story: "lost a leg to a white whale".into(),
            game_type: "platformer anime game".into(),
            render_style: "2D anime".into(),
        }
    }

    fn scripted(backend: ScriptedBackend) -> (Arc<ScriptedBackend>, ProviderHandle) {
        let backend = Arc::new(backend);
        (backend.clone(), ProviderHandle::with_backend(backend, RetryPolicy::immediate(0), 4))
    }

    fn profile_text(story_words: usize) -> String {
        format!(
            "Name: Ahab\nAge: 58\nDressing style: whalebone-buttoned coat\nWeapon: harpoon\nBackground story: {}\n",
            vec!["sea"; story_words].join(" ")
        )
    }

    #[test]
    fn summary_prompt_embeds_spec() {
        let req = build_summary_prompt(&ahab_spec(), &TemplateSet::builtin().summary).unwrap();
        let user = &req.messages.last().unwrap().content;
        assert_eq!(req.messages.last().unwrap().role, Role::User);
        for text in ["Ahab", "platformer anime game", "2D anime", "obsessed sea captain", "white whale"] {
            assert!(user.contains(text), "{text}");
        }
        assert!(user.contains("no more than 150 words"));
    }

    #[test]
    fn summary_prompt_unknown_placeholder() {
        let t = PromptTemplate::new("bad", TemplateLayer::Summary, "{{height}}");
        assert!(matches!(
            build_summary_prompt(&ahab_spec(), &t),
            Err(PipelineError::Template(TemplateError::UnknownPlaceholder { .. }))
        ));
    }

    #[test]
    fn summary_prompt_asks_for_a_name_when_none_given() {
        let mut spec = ahab_spec();
        spec.name.clear();
        let req = build_summary_prompt(&spec, &TemplateSet::builtin().summary).unwrap();
        assert!(req.messages.last().unwrap().content.contains("invent a fitting name"));
    }

    #[test]
    fn compliant_summary_is_ok_on_first_attempt() {
        let outcome = summarize_profile(&ahab_spec(), &ProviderHandle::mock(1), &TemplateSet::builtin()).unwrap();
        assert_eq!(outcome.status, ParseStatus::Ok);
        assert_eq!(outcome.attempts, 1);
        assert_eq!(outcome.profile.unwrap().name, "Ahab");
    }

    #[test]
    fn two_long_stories_then_compliant_is_repaired() {
        let (backend, handle) = scripted(ScriptedBackend::new(1).with_script([
            Ok(profile_text(200)),
            Ok(profile_text(200)),
            Ok(profile_text(100)),
        ]));
        let outcome = summarize_profile(&ahab_spec(), &handle, &TemplateSet::builtin()).unwrap();
        assert_eq!(outcome.status, ParseStatus::Repaired);
        assert_eq!(outcome.attempts, 3);
        assert_eq!(outcome.raw_transcripts.len(), 3);
        assert_eq!(word_count(&outcome.profile.unwrap().background_story), 100);
        // The repair turn quotes the violation.
        let requests = backend.text_requests();
        let last = requests.last().unwrap();
        assert_eq!(last.messages.len(), 6);
        assert!(last.messages[3].content.contains("background_story exceeds 150 words (200)"));
    }

    #[test]
    fn always_malformed_fails_after_three() {
        let (_, handle) = scripted(ScriptedBackend::new(1).answering(PromptTask::Profile, Ok("no labels here".into())));
        let outcome = summarize_profile(&ahab_spec(), &handle, &TemplateSet::builtin()).unwrap();
        assert_eq!(outcome.status, ParseStatus::Failed);
        assert_eq!(outcome.attempts, 3);
        assert!(outcome.profile.is_none());
        assert_eq!(outcome.errors.len(), 3);
    }

    #[test]
    fn image_prompt_assembly() {
        let keywords = KeywordSet::new(["cool", "hacker", "neon", "hood", "taser"].map(String::from).into()).unwrap();
        let prompt = build_image_prompt(&keywords, "2D anime AVG", "A very cool boy with long hair").unwrap();
        assert_eq!(
            prompt.assembled,
            "2D anime AVG, A very cool boy with long hair, cool, hacker, neon, hood, taser, \
             single character, full-body concept reference"
        );
        assert_eq!(prompt, build_image_prompt(&keywords, "2D anime AVG", "A very cool boy with long hair").unwrap());
        let no_role = build_image_prompt(&keywords, "ink", "").unwrap();
        assert!(no_role.assembled.starts_with("ink, cool, hacker"));
        assert!(matches!(build_image_prompt(&keywords, " ", "x"), Err(PipelineError::Precondition(_))));
    }

    #[test]
    fn keyword_failure_stops_before_images() {
        let (backend, handle) = scripted(
            ScriptedBackend::new(3).answering(PromptTask::Keywords, Err(ProviderError::Unavailable("down".into()))),
        );
        let err = run_pipeline(&ahab_spec(), &handle, &TemplateSet::builtin()).unwrap_err();
        assert_eq!(err.layer(), Some(Layer::Keywords));
        assert!(err.to_string().starts_with("keywords layer failed"));
        assert_eq!(backend.image_call_count(), 0);
    }

    #[test]
    fn layers_run_in_order() {
        let (backend, handle) = scripted(ScriptedBackend::new(3));
        let result = Pipeline::new(handle, TemplateSet::builtin())
            .with_image_size(16, 16)
            .run(&ahab_spec())
            .unwrap();
        assert_eq!(result.images.len(), 5);
        let order: Vec<&str> = backend
            .calls()
            .iter()
            .map(|c| match c {
                RecordedCall::Text { task: PromptTask::Profile, .. } => "profile",
                RecordedCall::Text { task: PromptTask::Keywords, .. } => "keywords",
                RecordedCall::Text { .. } => "other",
                RecordedCall::Images(_) => "images",
            })
            .collect();
        assert_eq!(order, ["profile", "keywords", "images"]);
    }
}
