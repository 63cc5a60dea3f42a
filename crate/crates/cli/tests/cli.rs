use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn charforge(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charforge"))
        .arg("--workspace")
        .arg(ws)
        .args(["--mock-seed", "11"])
        .args(args)
        .env_remove("CHARFORGE_API_BASE")
        .env_remove("CHARFORGE_API_KEY")
        .output()
        .unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_spec(dir: &Path, spec: Value) -> String {
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_vec(&spec).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn dwarf() -> Value {
    json!({
        "role_details": "a wise old dwarf",
        "background_story": "keeper of the mountain forge",
        "game_type": "fantasy RPG",
        "render_style": "Chinese-ink",
    })
}

#[test]
fn create_edit_regen_select_card_export_import() {
    let tmp = TempDir::new().unwrap();
    let ws = tmp.path().join("ws");
    let spec = write_spec(tmp.path(), dwarf());

    let created = ok_json(charforge(&ws, &["create", "--spec", &spec]));
    let id = created["session_id"].as_str().unwrap().to_owned();
    assert_eq!(created["stale"], json!([]));
    assert_eq!(created["images"].as_array().unwrap().len(), 5);
    assert!(created["image_prompt"].as_str().unwrap().starts_with("Chinese-ink"));

    let edited = ok_json(charforge(&ws, &["edit", &id, "profile.weapon", "rune hammer"]));
    assert_eq!(edited["stale"], json!(["keywords", "images"]));

    let regen = ok_json(charforge(&ws, &["regen", &id, "--layer", "keywords"]));
    assert_eq!(regen["stale"], json!([]));

    let selected = ok_json(charforge(&ws, &["select", &id, "2"]));
    assert_eq!(selected["selected_image_id"], regen["images"][1]);

    let card = ok_json(charforge(&ws, &["id-card", &id]));
    assert_eq!(card["profile"]["weapon"], "rune hammer");
    assert_eq!(card["selected_image"]["image_id"], regen["images"][1]);

    let reply = charforge(&ws, &["chat", &id, "--message", "What do you forge?"]);
    assert!(reply.status.success());
    assert!(!String::from_utf8_lossy(&reply.stdout).trim().is_empty());

    let bundle = tmp.path().join("dwarf.charpack");
    let out = charforge(&ws, &["export", &id, "--bundle", bundle.to_str().unwrap()]);
    assert!(out.status.success());
    let other = tmp.path().join("other");
    let out = charforge(&other, &["import", bundle.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), id);
    let card2 = ok_json(charforge(&other, &["id-card", &id]));
    assert_eq!(card2["profile"], card["profile"]);
}

#[test]
fn interactive_chat_reads_stdin() {
    let tmp = TempDir::new().unwrap();
    let ws = tmp.path().join("ws");
    let spec = write_spec(tmp.path(), dwarf());
    let id = ok_json(charforge(&ws, &["create", "--spec", &spec]))["session_id"].as_str().unwrap().to_owned();
    let mut child = Command::new(env!("CARGO_BIN_EXE_charforge"))
        .args(["--workspace", ws.to_str().unwrap(), "chat", &id])
        .env_remove("CHARFORGE_API_BASE")
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"hello\n\nhow old are you?\n/quit\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches(": ").count(), 2, "{text}");
}

#[test]
fn batch_npc_writes_distinct_variants() {
    let tmp = TempDir::new().unwrap();
    let ws = tmp.path().join("ws");
    let spec = write_spec(tmp.path(), dwarf());
    let out_dir = tmp.path().join("npcs");
    let out = charforge(&ws, &["batch-npc", "--spec", &spec, "-k", "4", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names = Vec::new();
    for i in 1..=4 {
        let doc: Value = serde_json::from_slice(&std::fs::read(out_dir.join(format!("npc-{i:02}.json"))).unwrap()).unwrap();
        names.push(doc["profile"]["name"].as_str().unwrap().to_lowercase());
        assert!(doc["image_prompt"].as_str().unwrap().contains("Chinese-ink"));
        for n in 1..=5 {
            assert!(out_dir.join(format!("npc-{i:02}-{n}.png")).is_file());
        }
    }
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 4);

    let out = charforge(&ws, &["batch-npc", "--spec", &spec, "-k", "0", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PRECONDITION_FAILED"));
}

#[test]
fn link_and_neighbors() {
    let tmp = TempDir::new().unwrap();
    let ws = tmp.path().join("ws");
    let spec = write_spec(tmp.path(), dwarf());
    let a = ok_json(charforge(&ws, &["create", "--spec", &spec]))["session_id"].as_str().unwrap().to_owned();
    let b = ok_json(charforge(&ws, &["create", "--spec", &spec]))["session_id"].as_str().unwrap().to_owned();
    let graph = ok_json(charforge(&ws, &["link", "clan", &a, &b, "mentor"]));
    assert_eq!(graph["edges"], json!([{ "from": a, "to": b, "label": "mentor" }]));
    let out = charforge(&ws, &["neighbors", "clan", &b]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("<- {a}\tmentor"));
    let out = charforge(&ws, &["link", "clan", &a, &a, "self"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SELF_LOOP"));
}

#[test]
fn errors_exit_non_zero() {
    let tmp = TempDir::new().unwrap();
    let ws = tmp.path().join("ws");
    let out = charforge(&ws, &["regen", "missing", "--layer", "images"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NOT_FOUND"));
    let spec = write_spec(tmp.path(), json!({ "game_type": "RPG", "render_style": "" }));
    let out = charforge(&ws, &["create", "--spec", &spec]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("VALIDATION_FAILED"));
    let out = charforge(&ws, &["--templates", tmp.path().to_str().unwrap(), "pipeline", "--spec", &spec]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("TEMPLATE_MISSING"));
}

#[test]
fn custom_templates_are_used() {
    let tmp = TempDir::new().unwrap();
    let templates = tmp.path().join("templates");
    std::fs::create_dir_all(&templates).unwrap();
    let builtin = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../templates");
    for entry in std::fs::read_dir(&builtin).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), templates.join(entry.file_name())).unwrap();
    }
    std::fs::write(
        templates.join("image.v2.txt"),
        "{{render_style}} style, {{role_details}}, {{keywords}}, single character, full-body concept reference, painted",
    )
    .unwrap();
    let spec = write_spec(tmp.path(), dwarf());
    let ws = tmp.path().join("ws");
    let out = charforge(&ws, &["--templates", templates.to_str().unwrap(), "pipeline", "--spec", &spec]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(result["image_prompt"]["assembled"].as_str().unwrap().starts_with("Chinese-ink style,"));
}
