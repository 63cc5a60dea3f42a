use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use charforge_cli::service::{EdgeRequest, EditRequest, FieldEdit, SelectRequest, SessionView};
use charforge_cli::{serve, ApiError, Studio, StudioConfig};
use charforge_core::{batch_generate_npcs, canon, CharacterSpec, ErrorCode, Layer};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "charforge", version, about = "Character design co-creation studio")]
struct Cli {
    /// Workspace directory holding characters, sessions, transcripts, graphs and blobs.
    #[arg(long, global = true, env = "CHARFORGE_WORKSPACE", default_value = "charforge-workspace")]
    workspace: PathBuf,
    /// Directory of `<layer>.v<N>.txt` prompt templates overriding the built-in set.
    #[arg(long, global = true, env = "CHARFORGE_TEMPLATES")]
    templates: Option<PathBuf>,
    /// Seed for the offline mock provider.
    #[arg(long, global = true, env = "CHARFORGE_MOCK_SEED", default_value_t = 0)]
    mock_seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start a session from a spec file and generate every layer.
    Create {
        #[arg(long)]
        spec: PathBuf,
        /// Only record the spec; generate later with `regen`.
        #[arg(long)]
        no_generate: bool,
    },
    /// Regenerate a layer and everything below it.
    Regen {
        session: String,
        #[arg(long, default_value = "profile")]
        layer: String,
    },
    /// Edit one field: `spec.<field>`, `profile.<field>` or `keywords`.
    Edit {
        session: String,
        path: String,
        /// JSON value, or plain text for string fields.
        value: String,
    },
    /// Select a reference image by 1-based position or digest.
    Select { session: String, image: String },
    /// Print or write the ID card of a finished character.
    IdCard {
        character: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Talk to a character; reads lines from stdin unless --message is given.
    Chat {
        character: String,
        #[arg(long)]
        message: Option<String>,
    },
    /// Generate k style-consistent NPC variants into a directory.
    BatchNpc {
        #[arg(long)]
        spec: PathBuf,
        #[arg(short = 'k', long = "count")]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a character bundle.
    Export {
        character: String,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Import a character bundle into the workspace.
    Import { bundle: PathBuf },
    /// Run the full pipeline once and print the canonical result.
    Pipeline {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Add or relabel a relationship edge between two saved characters.
    Link { graph: String, from: String, to: String, label: String },
    /// List the relationships of a character in a graph.
    Neighbors { graph: String, character: String },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

enum Failure {
    Api(ApiError),
    Partial(String),
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::Api(e)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::with_code(ErrorCode::StorageIo, format!("{}: {e}", path.display()))
}

fn read_spec(path: &Path) -> Result<CharacterSpec, ApiError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("values serialize"));
}

/// Session overview without image payloads.
fn summary(view: &SessionView) -> Value {
    let s = &view.session;
    json!({
        "session_id": s.session_id(),
        "revision": view.revision,
        "name": s.profile().map(|p| p.name.clone()),
        "stale": s.stale(),
        "keywords": s.keywords(),
        "image_prompt": s.image_prompt().map(|p| p.assembled.clone()),
        "images": s.images().iter().map(|i| i.image_id.as_str()).collect::<Vec<_>>(),
        "selected_image_id": s.selected_image_id(),
    })
}

fn parse_layer(raw: &str) -> Result<Layer, ApiError> {
    Layer::parse(raw).ok_or_else(|| ApiError::bad_request(format!("layer must be profile, keywords or images, got {raw:?}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = StudioConfig::from_env(&cli.workspace, cli.templates.clone(), cli.mock_seed);
    let studio = Studio::open(&config)?;
    match cli.command {
        Command::Create { spec, no_generate } => {
            let mut view = studio.create_session(read_spec(&spec)?)?;
            if !no_generate {
                view = studio.regenerate(view.session.session_id(), Layer::Profile, Some(view.revision))?;
            }
            print_json(&summary(&view));
        }
        Command::Regen { session, layer } => {
            print_json(&summary(&studio.regenerate(&session, parse_layer(&layer)?, None)?));
        }
        Command::Edit { session, path, value } => {
            let value = serde_json::from_str(&value).unwrap_or(Value::String(value));
            let request = EditRequest { edits: vec![FieldEdit { path, value }], expected_revision: None };
            print_json(&summary(&studio.edit_fields(&session, &request)?));
        }
        Command::Select { session, image } => {
            let image_id = match image.parse::<usize>() {
                Ok(n) if (1..=9).contains(&n) => {
                    let view = studio.session(&session)?;
                    view.session
                        .images()
                        .get(n - 1)
                        .map(|i| i.image_id.as_str().to_owned())
                        .ok_or_else(|| ApiError::with_code(ErrorCode::UnknownImage, format!("no image #{n}")))?
                }
                _ => image,
            };
            let view = studio.select_image(&session, &SelectRequest { image_id, expected_revision: None })?;
            print_json(&summary(&view));
        }
        Command::IdCard { character, out } => {
            let card = studio.id_card(&character)?;
            let bytes = canon::encode(&card).map_err(|e| ApiError::bad_request(e.to_string()))?;
            match out {
                Some(path) => {
                    write_file(&path, &bytes)?;
                    println!("{}", path.display());
                }
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Chat { character, message } => {
            let name = studio.id_card(&character).map(|c| c.profile.name).unwrap_or_else(|_| character.clone());
            match message {
                Some(message) => println!("{}", studio.chat(&character, &message)?.reply),
                None => {
                    let stdin = std::io::stdin();
                    let mut out = std::io::stdout();
                    loop {
                        print!("> ");
                        out.flush().ok();
                        let mut line = String::new();
                        if stdin.lock().read_line(&mut line).map_err(|e| io_error(Path::new("stdin"), e))? == 0 {
                            break;
                        }
                        let line = line.trim();
                        if line == "/quit" {
                            break;
                        }
                        if line.is_empty() {
                            continue;
                        }
                        match studio.chat(&character, line) {
                            Ok(reply) => println!("{name}: {}", reply.reply),
                            Err(e) => eprintln!("error: {e}"),
                        }
                    }
                }
            }
        }
        Command::BatchNpc { spec, k, out } => {
            let spec = read_spec(&spec)?;
            let outcome = batch_generate_npcs(&spec, k, studio.pipeline()).map_err(ApiError::from)?;
            std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            for member in &outcome.members {
                let stem = format!("npc-{:02}", member.index);
                let result = &member.result;
                let doc = json!({
                    "index": member.index,
                    "profile": result.profile,
                    "keywords": result.keywords,
                    "image_prompt": result.image_prompt.assembled,
                    "images": result.images.iter().enumerate().map(|(i, img)| json!({
                        "image_id": img.image_id,
                        "file": format!("{stem}-{}.png", i + 1),
                    })).collect::<Vec<_>>(),
                    "name_attempts": member.name_attempts,
                    "suffixed": member.suffixed,
                });
                let bytes = canon::value_bytes(&doc).map_err(|e| ApiError::bad_request(e.to_string()))?;
                write_file(&out.join(format!("{stem}.json")), &bytes)?;
                for (i, img) in result.images.iter().enumerate() {
                    write_file(&out.join(format!("{stem}-{}.png", i + 1)), &img.media)?;
                }
                println!("{}\t{}\t{}", member.index, result.profile.name, result.image_prompt.assembled);
            }
            if let Some((index, err)) = outcome.failure {
                let err = ApiError::from(err);
                return Err(Failure::Partial(format!(
                    "variant {index} of {k} failed, {} written: {err}",
                    outcome.members.len()
                )));
            }
        }
        Command::Export { character, bundle } => {
            write_file(&bundle, &studio.export_bundle(&character)?)?;
            println!("{}", bundle.display());
        }
        Command::Import { bundle } => {
            let bytes = std::fs::read(&bundle).map_err(|e| io_error(&bundle, e))?;
            println!("{}", studio.import_bundle(&bytes)?);
        }
        Command::Pipeline { spec } => {
            let result = studio.pipeline().run(&read_spec(&spec)?).map_err(ApiError::from)?;
            let bytes = canon::encode(&result).map_err(|e| ApiError::bad_request(e.to_string()))?;
            std::io::stdout().write_all(&bytes).map_err(|e| io_error(Path::new("stdout"), e))?;
        }
        Command::Link { graph, from, to, label } => {
            let view = studio.add_edge(&graph, &EdgeRequest { from, to, label })?;
            print_json(&serde_json::to_value(view).expect("graph serializes"));
        }
        Command::Neighbors { graph, character } => {
            for n in studio.neighbors(&graph, &character)? {
                let arrow = match n.direction {
                    charforge_core::Direction::Outgoing => "->",
                    charforge_core::Direction::Incoming => "<-",
                };
                println!("{arrow} {}\t{}", n.other_id, n.label);
            }
        }
        Command::Serve { addr } => {
            eprintln!("provider: {}", studio.provider_kind().as_str());
            serve(studio, addr).map_err(|e| io_error(Path::new("listener"), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Api(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(3)
        }
    }
}
