//! Command-line entry points.
//!
//! Exit codes: 0 on success, 2 when a model-backed stage failed, 1 for
//! every other error including usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use corpusforge_core::store::{export_dataset, ingest_corpus, CorpusFormat, DatasetFormat};
use corpusforge_core::{preview_stage, run_project, AdapterSet, Error, PreviewStage, ProjectConfig, Store};

use crate::api::{self, parse_statuses, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "corpusforge",
    version,
    about = "Build quality-graded parallel corpora from mono corpora"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a corpus into a project, creating the project if needed.
    Ingest(IngestArgs),
    /// Ingest, run the pipeline and export in one go.
    Run(RunArgs),
    /// Export the dataset of a finished project.
    Export(ExportArgs),
    /// Print a project's pipeline report.
    Report(ProjectArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Run one stage on a sample without saving anything.
    Preview(PreviewArgs),
}

#[derive(Debug, Args)]
struct StoreArgs {
    /// Directory holding the store file.
    #[arg(long, env = "CORPUSFORGE_DATA_DIR")]
    data_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    project: String,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    target: ProjectArgs,
    /// Corpus file, one segment per line (txt) or one object per line (jsonl).
    #[arg(long)]
    input: PathBuf,
    /// txt or jsonl; guessed from the file extension when omitted.
    #[arg(long)]
    input_format: Option<String>,
    /// Project config (JSON), used when the project is created.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    input_format: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset output file; written only when the whole run succeeds.
    #[arg(long)]
    out: PathBuf,
    /// jsonl or tsv.
    #[arg(long, default_value = "jsonl")]
    format: String,
    /// Comma-separated pair statuses to export.
    #[arg(long)]
    include: Option<String>,
    #[arg(long, default_value = "cli")]
    project: String,
    /// Persist the project here instead of in memory. A project that exists
    /// but has not been run yet is reused.
    #[arg(long, env = "CORPUSFORGE_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    target: ProjectArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: String,
    #[arg(long)]
    include: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Default config for projects created without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built review UI to serve at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Bearer token required on mutating requests.
    #[arg(long, env = "CORPUSFORGE_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    #[command(flatten)]
    target: ProjectArgs,
    /// filter, gec, nmt, ape or qe.
    #[arg(long)]
    stage: String,
    #[arg(short, long, default_value_t = 5)]
    n: usize,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io { path: PathBuf, source: std::io::Error },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Core(Error::Stage(_)) => 2,
            _ => 1,
        }
    }

    fn report(&self) {
        match self {
            Failure::Core(e) => {
                eprintln!("error[{}]: {e}", e.code());
                if let Some(details) = e.details() {
                    eprintln!("{}", serde_json::to_string(&details).unwrap_or_default());
                }
            }
            Failure::Io { path, source } => eprintln!("error: {}: {source}", path.display()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            f.report();
            f.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::Run(args) => run(args),
        Command::Export(args) => export(args),
        Command::Report(args) => report(args),
        Command::Serve(args) => serve(args),
        Command::Preview(args) => preview(args),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| Failure::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>) -> CliResult<ProjectConfig> {
    let Some(path) = path else {
        return Ok(ProjectConfig::default());
    };
    let config: ProjectConfig = serde_json::from_slice(&read(path)?)
        .map_err(|e| Error::Validation(format!("{}: invalid config: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn corpus_format(explicit: Option<&str>, path: &Path) -> CliResult<CorpusFormat> {
    match explicit {
        Some(f) => Ok(f.parse()?),
        None if path.extension().is_some_and(|e| e == "jsonl") => Ok(CorpusFormat::Jsonl),
        None => Ok(CorpusFormat::Txt),
    }
}

fn open_store(args: &StoreArgs) -> CliResult<Store> {
    Ok(Store::open(&args.data_dir)?)
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Writes `bytes` to `path` through a temporary file so that a reader never
/// sees a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |source| Failure::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn include_set(list: Option<&str>) -> CliResult<std::collections::BTreeSet<corpusforge_core::PairStatus>> {
    Ok(match list {
        Some(list) => parse_statuses(list)?,
        None => corpusforge_core::store::default_export_statuses(),
    })
}

fn ingest(args: IngestArgs) -> CliResult<()> {
    let store = open_store(&args.target.store)?;
    let project = args.target.project.as_str();
    let payload = read(&args.input)?;
    let format = corpus_format(args.input_format.as_deref(), &args.input)?;
    if store.project(project).is_none() {
        store.create_project(project, project, load_config(args.config.as_deref())?)?;
    } else if args.config.is_some() {
        return Err(Error::Conflict(format!("project `{project}` exists; its config cannot be replaced")).into());
    }
    let ingested = ingest_corpus(&store, project, &payload, format)?;
    print_json(&serde_json::json!({ "project_id": project, "ingested": ingested }));
    Ok(())
}

fn run(args: RunArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref())?;
    let format: DatasetFormat = args.format.parse()?;
    let include = include_set(args.include.as_deref())?;
    let input_format = corpus_format(args.input_format.as_deref(), &args.input)?;
    let payload = read(&args.input)?;
    let store = match &args.data_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    };
    let project = args.project.as_str();
    if store.project(project).is_none() {
        store.create_project(project, project, config)?;
    } else if args.config.is_some() {
        return Err(Error::Conflict(format!("project `{project}` exists; its config cannot be replaced")).into());
    }
    ingest_corpus(&store, project, &payload, input_format)?;
    let report = run_project(&store, project)?;
    let dataset = export_dataset(&store, project, format, &include)?;
    write_atomic(&args.out, &dataset)?;
    print_json(&report);
    Ok(())
}

fn export(args: ExportArgs) -> CliResult<()> {
    let store = open_store(&args.target.store)?;
    let format: DatasetFormat = args.format.parse()?;
    let include = include_set(args.include.as_deref())?;
    let dataset = export_dataset(&store, &args.target.project, format, &include)?;
    match &args.out {
        Some(path) => write_atomic(path, &dataset),
        None => std::io::stdout().write_all(&dataset).map_err(|source| Failure::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn report(args: ProjectArgs) -> CliResult<()> {
    let store = open_store(&args.store)?;
    let project = store.require_project(&args.project)?;
    match (project.last_report, store.run_lease(&args.project)) {
        (Some(report), _) => print_json(&report),
        (None, Some(lease)) => print_json(&lease),
        (None, None) => {
            return Err(Error::NotFound(format!("project `{}` has no report yet", args.project)).into());
        }
    }
    Ok(())
}

fn preview(args: PreviewArgs) -> CliResult<()> {
    let store = open_store(&args.target.store)?;
    let stage: PreviewStage = args.stage.parse()?;
    let project = store.require_project(&args.target.project)?;
    let adapters = AdapterSet::from_config(&project.config)?;
    print_json(&preview_stage(&store, &args.target.project, stage, args.n, &adapters)?);
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult<()> {
    let default_config = load_config(args.config.as_deref())?;
    let store = open_store(&args.store)?;
    if let Some(dir) = &args.static_dir {
        if !dir.is_dir() {
            return Err(Error::Validation(format!("static dir {} does not exist", dir.display())).into());
        }
    }
    let app = api::router(
        AppState {
            store: Arc::new(store),
            token: args.token.filter(|t| !t.is_empty()),
            default_config,
        },
        args.static_dir,
    );
    let io = |source| Failure::Io {
        path: PathBuf::from(args.bind.to_string()),
        source,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind).await.map_err(io)?;
        eprintln!("corpusforge {} listening on http://{}", api::VERSION, args.bind);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(io)
    })
}
