mod common;

use std::collections::BTreeMap;
use std::io::Read;

use charforge_core::store::Fault;
use charforge_core::{
    build_persona, chat, export_bundle, import_bundle, BundleError, CharacterRecord, ChatTranscript, EntityKind,
    FixedClock, GenerationSession, Layer, LineageGraph, ProviderHandle, StoreError, Workspace,
};
use proptest::prelude::*;
use serde_json::Value;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
    ws: Workspace,
    session: GenerationSession,
    record: CharacterRecord,
}

/// A saved character with an optional selection, chat history and relationship.
fn fixture(seed: u64, select: Option<usize>, exchanges: usize, linked: bool) -> Fixture {
    let dir = TempDir::new().unwrap();
    let ws = Workspace::open(dir.path()).unwrap().without_sync();
    let clock = FixedClock::epoch();
    let pipeline = common::mock_pipeline(seed);
    let mut session = GenerationSession::create_with_id(format!("hero{seed}"), common::warrior_spec(), &clock)
        .unwrap()
        .regenerate(Layer::Profile, &pipeline, &clock)
        .unwrap();
    if let Some(i) = select {
        let id = session.images()[i].image_id.clone();
        session = session.select_image(&id, &clock).unwrap();
    }
    let record = CharacterRecord::from_session(&session).unwrap();
    ws.save(&session, 0).unwrap();
    ws.save(&record, 0).unwrap();
    if exchanges > 0 {
        let card =
            build_persona(&record.character_id, &record.profile, record.keywords.as_ref().unwrap(), &[]).unwrap();
        let provider = ProviderHandle::mock(seed);
        let mut transcript = ChatTranscript::new(record.character_id.clone());
        for i in 0..exchanges {
            transcript = chat(&card, &transcript, &format!("question {i}"), &provider, &clock).unwrap().1;
        }
        ws.save(&transcript, 0).unwrap();
    }
    if linked {
        let graph = LineageGraph::new("crew")
            .add_node(record.character_id.clone())
            .add_node("sidekick")
            .add_node("stranger")
            .add_node("other")
            .link(&record.character_id, "sidekick", "mentor")
            .unwrap()
            .link("stranger", "other", "rival")
            .unwrap();
        ws.save(&graph, 0).unwrap();
    }
    Fixture { dir, ws, session, record }
}

fn entries(bundle: &[u8]) -> BTreeMap<String, Vec<u8>> {
    let mut archive = tar::Archive::new(bundle);
    archive
        .entries()
        .unwrap()
        .map(|e| {
            let mut e = e.unwrap();
            let path = e.path().unwrap().to_string_lossy().into_owned();
            let mut data = Vec::new();
            e.read_to_end(&mut data).unwrap();
            (path, data)
        })
        .collect()
}

fn repack(files: &BTreeMap<String, Vec<u8>>) -> Vec<u8> {
    let mut builder = tar::Builder::new(Vec::new());
    for (path, data) in files {
        let mut header = tar::Header::new_ustar();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        builder.append_data(&mut header, path, data.as_slice()).unwrap();
    }
    builder.into_inner().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn bundles_round_trip(seed in 0u64..1000, select in prop::option::of(0usize..5), exchanges in 0usize..4, linked in any::<bool>()) {
        let f = fixture(seed, select, exchanges, linked);
        let bundle = export_bundle(&f.ws, &f.record.character_id).unwrap();
        prop_assert_eq!(&export_bundle(&f.ws, &f.record.character_id).unwrap(), &bundle);

        let other = TempDir::new().unwrap();
        let ws2 = Workspace::open(other.path()).unwrap().without_sync();
        prop_assert_eq!(import_bundle(&ws2, &bundle).unwrap(), f.record.character_id.clone());

        let session = ws2.load::<GenerationSession>(f.session.session_id()).unwrap();
        prop_assert_eq!(&session.value, &f.session);
        prop_assert_eq!(session.revision, 1);
        prop_assert_eq!(ws2.load::<CharacterRecord>(&f.record.character_id).unwrap().value, f.record.clone());
        for kind in [EntityKind::Character, EntityKind::Session] {
            let id = &f.record.character_id;
            prop_assert_eq!(ws2.read_raw(kind, id).unwrap(), f.ws.read_raw(kind, id).unwrap());
        }
        prop_assert_eq!(ws2.exists(EntityKind::Transcript, &f.record.character_id), exchanges > 0);
        if exchanges > 0 {
            let a = f.ws.load::<ChatTranscript>(&f.record.character_id).unwrap().value;
            let b = ws2.load::<ChatTranscript>(&f.record.character_id).unwrap().value;
            prop_assert_eq!(a, b);
        }
        if linked {
            let g = ws2.load::<LineageGraph>("crew").unwrap().value;
            prop_assert_eq!(g.edge_count(), 1);
            prop_assert_eq!(g.label(&f.record.character_id, "sidekick"), Some("mentor"));
            prop_assert!(!g.contains("stranger"));
        }
        // Every blob the session references travelled with it.
        prop_assert_eq!(ws2.blob_ids().unwrap(), f.ws.blob_ids().unwrap());
        prop_assert_eq!(export_bundle(&ws2, &f.record.character_id).unwrap(), bundle);
    }

    #[test]
    fn interrupted_writes_leave_the_old_revision(seed in 0u64..1000, edits in 1usize..4) {
        let f = fixture(seed, None, 0, false);
        let clock = FixedClock::epoch();
        let mut session = f.session.clone();
        let mut revision = 1;
        for i in 0..edits {
            session = session.edit_field("spec.background_story", &Value::from(format!("chapter {i}")), &clock).unwrap();
            revision = f.ws.save(&session, revision).unwrap().revision;
        }
        let before = f.ws.read_raw(EntityKind::Session, session.session_id()).unwrap();
        f.ws.inject_fault(Fault::BeforeRename);
        let next = session.edit_field("spec.game_type", &Value::from("roguelike"), &clock).unwrap();
        let err = f.ws.save(&next, revision).unwrap_err();
        prop_assert!(matches!(err, StoreError::InjectedFault(_)));
        prop_assert_eq!(f.ws.read_raw(EntityKind::Session, session.session_id()).unwrap(), before);
        let loaded = f.ws.load::<GenerationSession>(session.session_id()).unwrap();
        prop_assert_eq!(loaded.value, session);
        prop_assert_eq!(loaded.revision, revision);
        Workspace::open(f.dir.path()).unwrap();
        let stray: Vec<_> = std::fs::read_dir(f.dir.path().join("sessions"))
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        prop_assert!(stray.is_empty());
    }
}

#[test]
fn stale_writes_conflict() {
    let f = fixture(1, None, 0, false);
    let err = f.ws.save(&f.session, 0).unwrap_err();
    assert!(matches!(err, StoreError::Conflict(c) if c.expected == 0 && c.actual == 1));
}

#[test]
fn deleted_blob_is_reported() {
    let f = fixture(2, Some(1), 0, false);
    let victim = f.session.images()[3].image_id.clone();
    std::fs::remove_file(f.ws.blob_path(&victim)).unwrap();
    match f.ws.load::<GenerationSession>(f.session.session_id()) {
        Err(StoreError::MissingBlob(id)) => assert_eq!(id, victim.as_str()),
        other => panic!("expected MissingBlob, got {other:?}"),
    }
}

#[test]
fn future_schema_is_rejected_without_writes() {
    let f = fixture(3, None, 1, true);
    let mut files = entries(&export_bundle(&f.ws, &f.record.character_id).unwrap());
    let path = EntityKind::Session.relative_path(f.session.session_id());
    let mut doc: Value = serde_json::from_slice(&files[&path]).unwrap();
    doc["schema"] = Value::from(99);
    files.insert(path.clone(), serde_json::to_vec(&doc).unwrap());

    let other = TempDir::new().unwrap();
    let ws2 = Workspace::open(other.path()).unwrap();
    match import_bundle(&ws2, &repack(&files)) {
        Err(BundleError::SchemaMismatch { entry, found }) => {
            assert_eq!(entry, path);
            assert_eq!(found, 99);
        }
        other => panic!("expected SchemaMismatch, got {other:?}"),
    }
    assert!(ws2.index().unwrap().is_empty());
    assert!(ws2.blob_ids().unwrap().is_empty());
}

#[test]
fn tampered_blob_is_corrupt() {
    let f = fixture(4, None, 0, false);
    let mut files = entries(&export_bundle(&f.ws, &f.record.character_id).unwrap());
    let blob = files.keys().find(|k| k.starts_with("blobs/")).unwrap().clone();
    files.get_mut(&blob).unwrap().push(0);
    let other = TempDir::new().unwrap();
    let ws2 = Workspace::open(other.path()).unwrap();
    assert!(matches!(import_bundle(&ws2, &repack(&files)), Err(BundleError::CorruptBundle(_))));
}

#[test]
fn path_traversal_ids_are_refused() {
    let f = fixture(5, None, 0, false);
    for id in ["../etc", "a/b", "", "x.y"] {
        assert!(matches!(f.ws.load::<GenerationSession>(id), Err(StoreError::InvalidId(_))), "{id}");
    }
}

#[test]
fn index_lists_what_was_saved() {
    let f = fixture(6, None, 1, true);
    let kinds: Vec<(EntityKind, String)> = f.ws.index().unwrap().into_iter().map(|e| (e.kind, e.id)).collect();
    let id = f.record.character_id.clone();
    for expected in [
        (EntityKind::Character, id.clone()),
        (EntityKind::Session, id.clone()),
        (EntityKind::Transcript, id),
        (EntityKind::Graph, "crew".to_owned()),
    ] {
        assert!(kinds.contains(&expected), "{expected:?}");
    }
}
