mod common;

use std::sync::Arc;

use charforge_core::canon;
use charforge_core::pipeline::build_keyword_prompt;
use charforge_core::model::{MAX_KEYWORDS, MAX_STORY_WORDS, MIN_KEYWORDS};
use charforge_core::provider::mock::PromptTask;
use charforge_core::provider::retry::RetryPolicy;
use charforge_core::provider::scripted::{RecordedCall, ScriptedBackend};
use charforge_core::{
    build_image_prompt, validate_profile, word_count, CharacterSpec, KeywordSet, ParseStatus, Pipeline,
    PipelineError, ProviderHandle, TemplateSet,
};
use proptest::prelude::*;

fn scripted(backend: ScriptedBackend) -> (Arc<ScriptedBackend>, Pipeline) {
    let backend = Arc::new(backend);
    let handle = ProviderHandle::with_backend(backend.clone(), RetryPolicy::immediate(0), 4);
    (backend, Pipeline::new(handle, TemplateSet::builtin()).with_image_size(4, 4))
}

fn spec() -> impl Strategy<Value = CharacterSpec> {
    (
        prop::option::of("[A-Z][a-z]{2,8}"),
        "[a-z]{3,9}( [a-z]{3,9}){0,4}",
        "[a-z]{3,9}( [a-z]{3,9}){0,8}",
        "[a-z]{3,9}( [a-z]{3,9}){0,2}",
        "[a-z]{3,9}( [a-z]{3,9}){0,2}",
    )
        .prop_map(|(name, role_details, background_story, game_type, render_style)| CharacterSpec {
            name: name.unwrap_or_default(),
            role_details,
            background_story,
            game_type,
            render_style,
        })
}

fn keyword_set() -> impl Strategy<Value = KeywordSet> {
    prop::collection::btree_set("[a-z]{2,8}( [a-z]{2,8}){0,2}", MIN_KEYWORDS..=MAX_KEYWORDS)
        .prop_filter_map("case-insensitive duplicates", |set| KeywordSet::new(set.into_iter().collect()).ok())
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(200) })]

    #[test]
    fn mock_profiles_are_always_valid(seed in any::<u64>(), spec in spec()) {
        let outcome = common::mock_pipeline(seed).profile(&spec, None).unwrap();
        prop_assert_eq!(outcome.status, ParseStatus::Ok);
        let profile = outcome.profile.unwrap();
        prop_assert!(validate_profile(&profile).is_valid());
        prop_assert!(word_count(&profile.background_story) <= MAX_STORY_WORDS);
        if !spec.name.is_empty() {
            prop_assert_eq!(profile.name, spec.name);
        }
    }

    #[test]
    fn assembled_prompt_mentions_every_keyword(keywords in keyword_set(), style in "[a-z]{3,9}( [a-z]{3,9}){0,2}", role in "[a-z ]{0,20}") {
        let prompt = build_image_prompt(&keywords, &style, &role).unwrap();
        for keyword in keywords.iter() {
            prop_assert!(prompt.assembled.contains(keyword));
        }
        prop_assert!(prompt.assembled.starts_with(style.as_str()));
        prop_assert!(!prompt.assembled.contains(", , "));
        prop_assert!(prompt.assembled.ends_with("single character, full-body concept reference"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(40) })]

    #[test]
    fn runs_are_deterministic_per_seed(seed in any::<u64>(), spec in spec()) {
        let a = common::mock_pipeline(seed).run(&spec).unwrap();
        let b = common::mock_pipeline(seed).run(&spec).unwrap();
        prop_assert_eq!(canon::encode(&a).unwrap(), canon::encode(&b).unwrap());
        prop_assert_eq!(a.images.len(), 5);
        prop_assert!((MIN_KEYWORDS..=MAX_KEYWORDS).contains(&a.keywords.len()));
    }

    #[test]
    fn layers_run_in_order(seed in any::<u64>(), spec in spec()) {
        let (backend, pipeline) = scripted(ScriptedBackend::new(seed));
        pipeline.run(&spec).unwrap();
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
        prop_assert_eq!(order, ["profile", "keywords", "images"]);
    }
}

fn labeled(name: &str, story: &str) -> String {
    format!(
        "Name: {name}\nAge: 31\nDressing style: patched flight jacket\nWeapon: taser pistol\nBackground story: {story}\n"
    )
}

#[test]
fn overlong_story_is_repaired() {
    let long = vec!["word"; 200].join(" ");
    let (backend, pipeline) = scripted(
        ScriptedBackend::new(5).with_script([Ok(labeled("Vex", &long)), Ok(labeled("Vex", "Flies cargo at night."))]),
    );
    let outcome = pipeline.profile(&common::warrior_spec(), None).unwrap();
    assert_eq!(outcome.status, ParseStatus::Repaired);
    assert_eq!(outcome.attempts, 2);
    assert_eq!(outcome.profile.unwrap().background_story, "Flies cargo at night.");
    let second = &backend.text_requests()[1];
    assert!(second.messages.last().unwrap().content.contains("rejected"));
}

#[test]
fn three_bad_replies_fail_the_layer() {
    let long = vec!["word"; 151].join(" ");
    let bad = labeled("Vex", &long);
    let (backend, pipeline) = scripted(ScriptedBackend::new(5).answering(PromptTask::Profile, Ok(bad)));
    let err = pipeline.run(&common::warrior_spec()).unwrap_err();
    assert!(matches!(err, PipelineError::ProfileUnparseable { attempts: 3, .. }));
    assert_eq!(backend.text_requests().len(), 3);
    assert_eq!(backend.image_call_count(), 0);
}

#[test]
fn story_at_exactly_the_limit_is_accepted() {
    let story = vec!["word"; MAX_STORY_WORDS].join(" ");
    let (_, pipeline) = scripted(ScriptedBackend::new(5).answering(PromptTask::Profile, Ok(labeled("Vex", &story))));
    let outcome = pipeline.profile(&common::warrior_spec(), None).unwrap();
    assert_eq!(outcome.status, ParseStatus::Ok);
}

#[test]
fn keyword_layer_sees_only_the_profile() {
    let (backend, pipeline) = scripted(ScriptedBackend::new(8));
    let spec = common::ahab_spec();
    let result = pipeline.run(&spec).unwrap();
    let keyword_request = backend
        .calls()
        .into_iter()
        .find_map(|c| match c {
            RecordedCall::Text { task: PromptTask::Keywords, request } => Some(request),
            _ => None,
        })
        .unwrap();
    let expected = build_keyword_prompt(&result.profile, &pipeline.templates().keywords).unwrap();
    assert_eq!(keyword_request, expected);
}

#[test]
fn empty_render_style_is_a_precondition_failure() {
    let keywords = KeywordSet::new(["a", "b", "c", "d", "e"].map(String::from).to_vec()).unwrap();
    assert!(matches!(build_image_prompt(&keywords, "  ", "hero"), Err(PipelineError::Precondition(_))));
}
