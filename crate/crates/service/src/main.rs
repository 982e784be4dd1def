use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use sketchplan_core::blob::encode_b64;
use sketchplan_core::geometry::Legend;
use sketchplan_core::lexicon::Lexicon;
use sketchplan_core::pipeline::run_headless;
use sketchplan_service::ops::{
    parse_required, ApiError, CreateBody, GenerateBody, PlacementBody, SelectBody, Service, SketchBody,
};
use sketchplan_service::store::Store;
use sketchplan_service::{build_engine, headless, http, load_config, BackendChoice};

#[derive(Parser)]
#[command(name = "engine", about = "Sketch-to-image planning engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Engine configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendChoice,
}

#[derive(Subcommand)]
enum Command {
    /// Infer, auto-select the top candidate per object and generate.
    Run {
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long)]
        legend: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        samples: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
        /// Static files for the browser client.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Lexicon maintenance.
    Lexicon {
        #[command(subcommand)]
        command: LexiconCommand,
    },
    /// Session operations against a data directory, without a server.
    Session {
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Subcommand)]
enum LexiconCommand {
    /// Aggregate a `name<TAB>attr|rel<TAB>phrase` file into a snapshot.
    Build { input: PathBuf, output: PathBuf },
}

#[derive(Subcommand)]
enum SessionCommand {
    Create {
        #[arg(long)]
        seed: Option<u64>,
    },
    List,
    Show {
        id: String,
    },
    Sketch {
        id: String,
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long)]
        legend: PathBuf,
    },
    Infer {
        id: String,
    },
    /// Replace the semantic space with the JSON document in `file`.
    Space {
        id: String,
        file: PathBuf,
        #[arg(long)]
        base_revision: Option<u64>,
    },
    Candidates {
        id: String,
        region: String,
    },
    Select {
        id: String,
        region: String,
        index: usize,
        #[arg(long)]
        version: Option<u64>,
    },
    Place {
        id: String,
        region: String,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        dx: i32,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        dy: i32,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    Generate {
        id: String,
        #[arg(long, default_value_t = 1)]
        samples: u32,
        #[arg(long)]
        seed: Option<u64>,
    },
    Results {
        id: String,
    },
}

fn fail(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::FAILURE
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn engine_from(args: &EngineArgs) -> Result<sketchplan_core::pipeline::Engine, String> {
    let config = load_config(args.config.as_deref()).map_err(|e| e.to_string())?;
    build_engine(config, args.backend).map_err(|e| e.to_string())
}

fn backend_name(choice: BackendChoice) -> &'static str {
    match choice {
        BackendChoice::Mock => "mock",
        BackendChoice::Http => "http",
    }
}

fn run(sketch: &Path, legend: &Path, args: &EngineArgs, seed: u64, samples: u32, out: &Path) -> ExitCode {
    let engine = match engine_from(args) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    let png = match read(sketch) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let legend = match read(legend).and_then(|b| {
        Legend::from_json(&String::from_utf8_lossy(&b)).map_err(|e| e.to_string())
    }) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let result = match run_headless(&engine, &png, legend, seed, samples) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    match headless::write_run(out, &result, backend_name(args.backend)) {
        Ok(0) => fail("no sample produced an image; see metadata.json"),
        Ok(n) => {
            println!("wrote {n} of {samples} samples to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(format!("{}: {e}", out.display())),
    }
}

fn lexicon_build(input: &Path, output: &Path) -> ExitCode {
    let lex = match Lexicon::ingest_file(input) {
        Ok(l) => l,
        Err(e) => return fail(format!("{}: {e}", input.display())),
    };
    if let Err(e) = lex.save(output) {
        return fail(format!("{}: {e}", output.display()));
    }
    println!("{} names written to {}", lex.key_count(), output.display());
    ExitCode::SUCCESS
}

async fn serve(addr: SocketAddr, data_dir: &Path, ui_dir: Option<PathBuf>, args: &EngineArgs) -> ExitCode {
    let engine = match engine_from(args) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    let store = match Store::open(data_dir) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", data_dir.display())),
    };
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => return fail(format!("bind {addr}: {e}")),
    };
    let local = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
    tracing::info!("{} sessions loaded from {}", store.ids().len(), data_dir.display());
    println!("listening on http://{local}");
    let _ = std::io::stdout().flush();
    let app = http::router(Service::new(store, engine), ui_dir);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

async fn session_op(svc: &Service, command: SessionCommand) -> Result<Value, ApiError> {
    let io_err = |e: String| ApiError::new(400, "io", e);
    match command {
        SessionCommand::Create { seed } => svc.create_session(CreateBody { seed }).await,
        SessionCommand::List => Ok(svc.list_sessions()),
        SessionCommand::Show { id } => svc.get_session(&id),
        SessionCommand::Sketch { id, sketch, legend } => {
            let png = read(&sketch).map_err(io_err)?;
            let legend: Legend = parse_required(&read(&legend).map_err(io_err)?)?;
            let body = SketchBody {
                sketch_png_b64: encode_b64(&png),
                legend,
            };
            svc.put_sketch(&id, body).await
        }
        SessionCommand::Infer { id } => svc.infer(&id).await,
        SessionCommand::Space { id, file, base_revision } => {
            let space: Value = parse_required(&read(&file).map_err(io_err)?)?;
            svc.put_space(&id, sketchplan_service::ops::SpaceBody { space, base_revision }).await
        }
        SessionCommand::Candidates { id, region } => svc.generate_candidates(&id, &region).await,
        SessionCommand::Select {
            id,
            region,
            index,
            version,
        } => svc.select(&id, &region, index, SelectBody { version }).await,
        SessionCommand::Place {
            id,
            region,
            dx,
            dy,
            scale,
        } => svc.place(&id, &region, PlacementBody { dx, dy, scale }).await,
        SessionCommand::Generate { id, samples, seed } => svc.generate(&id, GenerateBody { samples, seed }).await,
        SessionCommand::Results { id } => svc.results(&id),
    }
}

async fn session(data_dir: &Path, args: &EngineArgs, command: SessionCommand) -> ExitCode {
    let engine = match engine_from(args) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    let store = match Store::open(data_dir) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", data_dir.display())),
    };
    let svc = Service::new(store, engine);
    match session_op(&svc, command).await {
        Ok(view) => {
            println!("{}", serde_json::to_string_pretty(&view).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.body).expect("json"));
            ExitCode::from(if e.status < 500 { 2 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            sketch,
            legend,
            engine,
            seed,
            samples,
            out,
        } => run(&sketch, &legend, &engine, seed, samples, &out),
        Command::Lexicon {
            command: LexiconCommand::Build { input, output },
        } => lexicon_build(&input, &output),
        Command::Serve {
            addr,
            data_dir,
            ui_dir,
            engine,
        } => runtime().block_on(serve(addr, &data_dir, ui_dir, &engine)),
        Command::Session {
            data_dir,
            engine,
            command,
        } => runtime().block_on(session(&data_dir, &engine, command)),
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}
