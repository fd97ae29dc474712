//! `usersim`: drive the user-simulation service from the command line.
//! Without `--server` the service is embedded in-process, so every command
//! goes through the same HTTP surface a remote deployment exposes.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use usersim_client::ApiClient;
use usersim_core::api::{
    default_jobs, AgentSpec, BackendSpec, CacheImportRequest, ComparisonRequest, CorpusUpload,
    EvalRequest, IngestRequest, LabeledReport, PolicySpec, PromptRequest, PromptTarget,
    RenderRequest, SimulateRequest,
};
use usersim_core::corpus::{load_corpus, CorpusStats, SessionRecord};
use usersim_core::evaluation::EvalReport;
use usersim_core::policy::LlmOptions;
use usersim_core::prompting::{PromptMode, PromptSpec};
use usersim_core::report::ReportFormat;
use usersim_core::simulation::{AgentEvent, SimLimits};
use usersim_core::taxonomy::parse_act;
use usersim_core::transforms::{TransformMode, TransformSpec};
use usersim_service::{ServiceConfig, ServiceState};

use config::FileConfig;

#[derive(Parser)]
#[command(name = "usersim", version, about = "User simulator engine and evaluation harness")]
struct Cli {
    /// Base URL of a running service; default embeds one in-process
    #[arg(long, global = true)]
    server: Option<String>,
    /// Flat key=value config file (default: ./usersim.conf when present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a TEACh-style game directory into a canonical corpus file
    Ingest(IngestArgs),
    /// Step-kind statistics for a corpus
    Stats(StatsArgs),
    /// Print the exact prompt for one prediction point
    DumpPrompt(DumpPromptArgs),
    /// Replay a corpus against a policy and score it
    Evaluate(EvaluateArgs),
    /// Run a live closed-loop simulation
    Simulate(SimulateArgs),
    /// Inspect or move the response cache
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Render stored evaluation reports
    Report(ReportArgs),
    /// Run the HTTP service in the foreground
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Zs,
    Fs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliTransform {
    None,
    NoMoves,
    Selective,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliPolicy {
    Reactive,
    Majority,
    ConstantObserve,
    Oracle,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliBackend {
    Rule,
    CacheOnly,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliAgent {
    Idle,
    Replay,
    Scripted,
}

#[derive(Args)]
struct IngestArgs {
    /// Game directory (split subdirectories become split labels)
    #[arg(long)]
    dir: PathBuf,
    /// Dialogue-act annotation file
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Name the service stores the corpus under
    #[arg(long, default_value = "teach")]
    name: String,
    /// Canonical corpus file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Corpus file (JSONL of session records)
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long, value_enum)]
    format: Option<CliFormat>,
    /// Also write the statistics as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpPromptArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Session the prediction point belongs to
    #[arg(long)]
    session: String,
    /// Step index of the prediction point (history is everything before it)
    #[arg(long)]
    step: usize,
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus the few-shot examples are drawn from (default: --corpus)
    #[arg(long)]
    fs_corpus: Option<PathBuf>,
    /// Write the prompt bytes here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LlmFlags {
    /// Prompt mode for the llm policy
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    /// Few-shot example corpus for the llm policy (default: the main corpus)
    #[arg(long)]
    fs_corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<CliBackend>,
    /// Completion endpoint for --backend remote
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model_id: Option<String>,
    /// Redraw few-shot examples for every query instead of freezing one set
    #[arg(long)]
    resample_per_query: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long, value_enum)]
    policy: CliPolicy,
    /// Split the majority policy is fitted on (default: whole corpus)
    #[arg(long)]
    majority_split: Option<String>,
    #[arg(long, value_enum)]
    transform: Option<CliTransform>,
    /// Comma-separated verbs treated as moves by the transform
    #[arg(long, value_delimiter = ',')]
    move_verbs: Vec<String>,
    /// Comma-separated acts treated as robot questions by the transform
    #[arg(long, value_delimiter = ',')]
    question_acts: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Response-cache file for the embedded service
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Checkpoint file: written on abort, resumed from on the next run
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the full report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<CliFormat>,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    goal: String,
    #[arg(long, value_enum)]
    policy: CliPolicy,
    #[arg(long, value_enum, default_value = "idle")]
    agent: CliAgent,
    /// Corpus holding the session replayed by --agent replay
    #[arg(long)]
    replay_corpus: Option<PathBuf>,
    #[arg(long)]
    replay_session: Option<String>,
    /// Replay the driver as failing its physical actions
    #[arg(long)]
    replay_fail: bool,
    /// JSON file with the event list for --agent scripted
    #[arg(long)]
    script: Option<PathBuf>,
    /// Corpus supplying utterance templates and the majority policy
    #[arg(long)]
    template_corpus: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    max_consecutive_observes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    majority_split: Option<String>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Write the full log as JSON
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<CliFormat>,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Write the cache as JSONL
    Export {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge a JSONL export into the cache (newer entries win)
    Import {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Stored report JSON; pass several for a comparison table
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<CliFormat>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Corpus files preloaded at startup, named by file stem
    #[arg(long, num_args = 0..)]
    corpus: Vec<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    /// Bad invocation: wrong flags, bad config values. Exit code 2.
    Usage(String),
    /// The operation itself failed. Exit code 1.
    Runtime(String),
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn runtime(message: impl std::fmt::Display) -> CliError {
    CliError::Runtime(message.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start async runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let file_config = FileConfig::load(cli.config.as_deref()).map_err(usage)?;
    let server = cli.server.clone().or_else(|| file_config.get("server").map(str::to_string));

    if cli.print_config {
        print_effective_config(server.as_deref(), &file_config);
        return Ok(());
    }

    let Some(command) = cli.command else {
        Cli::command().print_help().ok();
        return Err(usage("a command is required"));
    };

    match command {
        Command::Ingest(args) => cmd_ingest(server.as_deref(), args).await,
        Command::Stats(args) => cmd_stats(server.as_deref(), &file_config, args).await,
        Command::DumpPrompt(args) => cmd_dump_prompt(server.as_deref(), &file_config, args).await,
        Command::Evaluate(args) => cmd_evaluate(server.as_deref(), &file_config, args).await,
        Command::Simulate(args) => cmd_simulate(server.as_deref(), &file_config, args).await,
        Command::Cache(command) => cmd_cache(server.as_deref(), &file_config, command).await,
        Command::Report(args) => cmd_report(server.as_deref(), &file_config, args).await,
        Command::Serve(args) => cmd_serve(&file_config, args).await,
    }
}

fn print_effective_config(server: Option<&str>, config: &FileConfig) {
    println!("server = {}", server.unwrap_or("(embedded)"));
    for key in config::KNOWN_KEYS.iter().filter(|k| **k != "server") {
        match config.get(key) {
            Some(value) => println!("{key} = {value}"),
            None => println!("{key} = (default)"),
        }
    }
}

/// Connect to `--server`, or embed a service in-process and connect to it.
async fn connect(server: Option<&str>, cache: Option<PathBuf>) -> Result<ApiClient, CliError> {
    if let Some(base) = server {
        if cache.is_some() {
            eprintln!("note: --cache applies to the embedded service; the remote server keeps its own");
        }
        return Ok(ApiClient::new(base));
    }
    let state = Arc::new(
        ServiceState::new(ServiceConfig { cache_path: cache }).map_err(runtime)?,
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(runtime)?;
    let addr = listener.local_addr().map_err(runtime)?;
    tokio::spawn(usersim_service::serve(listener, state));
    Ok(ApiClient::new(format!("http://{addr}")))
}

fn corpus_name(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| usage(format!("cannot derive a corpus name from {}", path.display())))
}

/// Load a local corpus file and upload it to the service under its stem name.
async fn upload_corpus(client: &ApiClient, path: &Path) -> Result<String, CliError> {
    let outcome = load_corpus(path, true).map_err(runtime)?;
    let name = corpus_name(path)?;
    let records: Vec<SessionRecord> =
        outcome.corpus.sessions().iter().map(SessionRecord::from).collect();
    client
        .upload_corpus(&CorpusUpload { name: name.clone(), records })
        .await
        .map_err(runtime)?;
    Ok(name)
}

fn config_enum<T: ValueEnum + Copy>(config: &FileConfig, key: &str) -> Result<Option<T>, CliError> {
    match config.get(key) {
        None => Ok(None),
        Some(value) => T::from_str(value, true)
            .map(Some)
            .map_err(|_| usage(format!("config key {key:?}: invalid value {value:?}"))),
    }
}

fn resolve_format(
    flag: Option<CliFormat>,
    config: &FileConfig,
) -> Result<ReportFormat, CliError> {
    let format = match flag.map(Ok).unwrap_or_else(|| {
        config_enum::<CliFormat>(config, "format").map(|f| f.unwrap_or(CliFormat::Text))
    }) {
        Ok(f) => f,
        Err(e) => return Err(e),
    };
    Ok(match format {
        CliFormat::Text => ReportFormat::Text,
        CliFormat::Json => ReportFormat::Json,
    })
}

fn resolve_seed(flag: Option<u64>, config: &FileConfig) -> Result<u64, CliError> {
    Ok(match flag {
        Some(seed) => seed,
        None => config.get_parsed::<u64>("seed").map_err(usage)?.unwrap_or(0),
    })
}

fn resolve_mode(flag: Option<CliMode>, config: &FileConfig) -> Result<PromptMode, CliError> {
    let mode = match flag {
        Some(mode) => mode,
        None => config_enum::<CliMode>(config, "mode")?.unwrap_or(CliMode::Zs),
    };
    Ok(match mode {
        CliMode::Zs => PromptMode::ZeroShot,
        CliMode::Fs => PromptMode::FewShot,
    })
}

fn build_transform(
    mode_flag: Option<CliTransform>,
    move_verbs: &[String],
    question_acts: &[String],
) -> Result<TransformSpec, CliError> {
    let mode = match mode_flag.unwrap_or(CliTransform::None) {
        CliTransform::None => TransformMode::None,
        CliTransform::NoMoves => TransformMode::ExcludeMoves,
        CliTransform::Selective => TransformMode::SelectiveRemoval,
    };
    let mut spec = TransformSpec::with_mode(mode);
    if !move_verbs.is_empty() {
        spec.move_verbs = move_verbs.iter().map(|v| v.trim().to_lowercase()).collect();
    }
    if !question_acts.is_empty() {
        spec.question_acts = question_acts
            .iter()
            .map(|name| parse_act(name).map_err(|e| usage(e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

struct LlmResolution {
    backend: BackendSpec,
    options: LlmOptions,
    prompt: PromptSpec,
}

async fn resolve_llm(
    client: &ApiClient,
    flags: &LlmFlags,
    config: &FileConfig,
    seed: u64,
) -> Result<(LlmResolution, Option<String>), CliError> {
    let backend_kind = match flags.backend {
        Some(kind) => kind,
        None => config_enum::<CliBackend>(config, "backend")?.unwrap_or(CliBackend::Rule),
    };
    let base_url = flags
        .base_url
        .clone()
        .or_else(|| config.get("base-url").map(str::to_string));
    let backend = match backend_kind {
        CliBackend::Rule => BackendSpec::Rule,
        CliBackend::CacheOnly => BackendSpec::CacheOnly,
        CliBackend::Remote => BackendSpec::Remote {
            base_url: base_url
                .ok_or_else(|| usage("--backend remote needs --base-url"))?,
        },
    };
    let mut options = LlmOptions::default();
    if let Some(model_id) =
        flags.model_id.clone().or_else(|| config.get("model-id").map(str::to_string))
    {
        options.model_id = model_id;
    }
    let mode = resolve_mode(flags.mode, config)?;
    let prompt = match mode {
        PromptMode::ZeroShot => PromptSpec::zero_shot(),
        PromptMode::FewShot => PromptSpec::few_shot(seed),
    };
    let fs_corpus = match &flags.fs_corpus {
        Some(path) => Some(upload_corpus(client, path).await?),
        None => None,
    };
    Ok((LlmResolution { backend, options, prompt }, fs_corpus))
}

async fn build_policy(
    client: &ApiClient,
    policy: CliPolicy,
    majority_split: Option<String>,
    llm: &LlmFlags,
    config: &FileConfig,
    seed: u64,
) -> Result<PolicySpec, CliError> {
    Ok(match policy {
        CliPolicy::Reactive => PolicySpec::Reactive,
        CliPolicy::Majority => PolicySpec::Majority { split: majority_split },
        CliPolicy::ConstantObserve => PolicySpec::ConstantObserve,
        CliPolicy::Oracle => PolicySpec::Oracle,
        CliPolicy::Llm => {
            let (resolution, fs_corpus) = resolve_llm(client, llm, config, seed).await?;
            PolicySpec::Llm {
                prompt: resolution.prompt,
                options: resolution.options,
                backend: resolution.backend,
                resample_per_query: llm.resample_per_query,
                fs_corpus,
            }
        }
    })
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

async fn cmd_ingest(server: Option<&str>, args: IngestArgs) -> Result<(), CliError> {
    let client = connect(server, None).await?;
    let request = IngestRequest {
        dir: args.dir.display().to_string(),
        annotations: args.annotations.as_ref().map(|p| p.display().to_string()),
        name: args.name.clone(),
    };
    let response = client.ingest(&request).await.map_err(runtime)?;
    for warning in &response.warnings {
        eprintln!("warning: {warning}");
    }
    if response.sessions == 0 {
        return Err(CliError::Runtime(format!(
            "no sessions ingested from {} ({} files seen)",
            args.dir.display(),
            response.files_seen
        )));
    }
    let records = client.corpus_records(&args.name).await.map_err(runtime)?;
    let mut body = String::new();
    for record in &records.records {
        body.push_str(&serde_json::to_string(record).map_err(runtime)?);
        body.push('\n');
    }
    write_out(&args.out, body.as_bytes())?;
    println!(
        "ingested {} sessions from {} files into {}",
        response.sessions,
        response.files_seen,
        args.out.display()
    );
    Ok(())
}

fn stats_text(name: &str, split: Option<&str>, stats: &CorpusStats) -> String {
    format!(
        "corpus: {name} (split: {})\nsessions: {}\nsteps: {}\nuser speak: {:.1}%\nrobot speak: {:.1}%\nrobot physical: {:.1}%\n",
        split.unwrap_or("all"),
        stats.n_sessions,
        stats.n_steps,
        stats.frac_user_speak * 100.0,
        stats.frac_robot_speak * 100.0,
        stats.frac_robot_physical * 100.0,
    )
}

async fn cmd_stats(
    server: Option<&str>,
    config: &FileConfig,
    args: StatsArgs,
) -> Result<(), CliError> {
    let client = connect(server, None).await?;
    let name = upload_corpus(&client, &args.corpus).await?;
    let split = args.split.clone().or_else(|| config.get("split").map(str::to_string));
    let response = client.stats(&name, split.as_deref()).await.map_err(runtime)?;
    let json = serde_json::to_string_pretty(&response).map_err(runtime)?;
    match resolve_format(args.format, config)? {
        ReportFormat::Text => {
            print!("{}", stats_text(&response.name, response.split.as_deref(), &response.stats));
        }
        ReportFormat::Json => println!("{json}"),
    }
    if let Some(out) = &args.out {
        write_out(out, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

async fn cmd_dump_prompt(
    server: Option<&str>,
    config: &FileConfig,
    args: DumpPromptArgs,
) -> Result<(), CliError> {
    let client = connect(server, None).await?;
    let name = upload_corpus(&client, &args.corpus).await?;
    let seed = resolve_seed(args.seed, config)?;
    let mode = resolve_mode(args.mode, config)?;
    let spec = match mode {
        PromptMode::ZeroShot => PromptSpec::zero_shot(),
        PromptMode::FewShot => PromptSpec::few_shot(seed),
    };
    let fs_corpus = match &args.fs_corpus {
        Some(path) => Some(upload_corpus(&client, path).await?),
        None => None,
    };
    let request = PromptRequest {
        spec,
        fs_corpus,
        target: PromptTarget::Point {
            corpus: name,
            session_id: args.session.clone(),
            step_index: args.step,
        },
    };
    let response = client.prompt(&request).await.map_err(runtime)?;
    eprintln!("sha256: {}", response.sha256);
    match &args.out {
        Some(path) => write_out(path, response.prompt.as_bytes())?,
        None => println!("{}", response.prompt),
    }
    Ok(())
}

async fn cmd_evaluate(
    server: Option<&str>,
    config: &FileConfig,
    args: EvaluateArgs,
) -> Result<(), CliError> {
    let cache = args.cache.clone().or_else(|| config.get("cache").map(PathBuf::from));
    let client = connect(server, cache).await?;
    let name = upload_corpus(&client, &args.corpus).await?;
    let seed = resolve_seed(args.seed, config)?;
    let split = args.split.clone().or_else(|| config.get("split").map(str::to_string));
    let jobs = match args.jobs {
        Some(jobs) => jobs,
        None => config.get_parsed::<usize>("jobs").map_err(usage)?.unwrap_or_else(default_jobs),
    };
    let policy =
        build_policy(&client, args.policy, args.majority_split.clone(), &args.llm, config, seed)
            .await?;
    let transform = build_transform(args.transform, &args.move_verbs, &args.question_acts)?;
    let request = EvalRequest {
        corpus: name,
        split,
        transform,
        policy,
        jobs,
        seed,
        checkpoint: args.checkpoint.as_ref().map(|p| p.display().to_string()),
    };
    let report = client.evaluate(&request).await.map_err(|e| {
        // An aborted run reports its checkpoint path in the error body.
        runtime(e)
    })?;

    let rendered = client
        .render(&RenderRequest { report: report.clone(), format: resolve_format(args.format, config)? })
        .await
        .map_err(runtime)?;
    print!("{}", rendered.text);
    if !rendered.text.ends_with('\n') {
        println!();
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
        write_out(out, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn load_script(path: &Path) -> Result<Vec<AgentEvent>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

async fn cmd_simulate(
    server: Option<&str>,
    config: &FileConfig,
    args: SimulateArgs,
) -> Result<(), CliError> {
    let cache = args.cache.clone().or_else(|| config.get("cache").map(PathBuf::from));
    let client = connect(server, cache).await?;
    let seed = resolve_seed(args.seed, config)?;

    if matches!(args.policy, CliPolicy::Oracle) {
        return Err(usage("the oracle policy only exists for replay evaluation"));
    }
    let template_corpus = match &args.template_corpus {
        Some(path) => Some(upload_corpus(&client, path).await?),
        None => None,
    };
    let policy =
        build_policy(&client, args.policy, args.majority_split.clone(), &args.llm, config, seed)
            .await?;

    let agent = match args.agent {
        CliAgent::Idle => AgentSpec::Idle,
        CliAgent::Replay => {
            let corpus_path = args
                .replay_corpus
                .as_ref()
                .ok_or_else(|| usage("--agent replay needs --replay-corpus"))?;
            let session_id = args
                .replay_session
                .clone()
                .ok_or_else(|| usage("--agent replay needs --replay-session"))?;
            let corpus = upload_corpus(&client, corpus_path).await?;
            AgentSpec::Replay { corpus, session_id, success: !args.replay_fail }
        }
        CliAgent::Scripted => {
            let path =
                args.script.as_ref().ok_or_else(|| usage("--agent scripted needs --script"))?;
            AgentSpec::Scripted { events: load_script(path)? }
        }
    };

    let defaults = SimLimits::default();
    let limits = SimLimits {
        max_steps: args.max_steps.unwrap_or(defaults.max_steps),
        max_consecutive_observes: args
            .max_consecutive_observes
            .unwrap_or(defaults.max_consecutive_observes),
    };
    let request = SimulateRequest {
        goal: args.goal.clone(),
        policy: policy.clone(),
        agent,
        limits,
        seed,
        template_corpus,
    };
    let response = client.simulate(&request).await.map_err(runtime)?;

    let envelope = serde_json::json!({
        "goal": request.goal,
        "policy": policy,
        "seed": seed,
        "limits": limits,
        "log": response.log,
        "transcript": response.transcript,
    });
    match resolve_format(args.format, config)? {
        ReportFormat::Text => print!("{}", response.transcript),
        ReportFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&envelope).map_err(runtime)?)
        }
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&envelope).map_err(runtime)?;
        write_out(out, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

async fn cmd_cache(
    server: Option<&str>,
    config: &FileConfig,
    command: CacheCommand,
) -> Result<(), CliError> {
    match command {
        CacheCommand::Export { cache, out } => {
            let cache = cache.or_else(|| config.get("cache").map(PathBuf::from));
            if server.is_none() && cache.is_none() {
                return Err(usage("cache export needs --cache (or a remote --server)"));
            }
            let client = connect(server, cache).await?;
            let response = client.cache_export().await.map_err(runtime)?;
            write_out(&out, response.jsonl.as_bytes())?;
            println!("exported {} entries to {}", response.entries, out.display());
        }
        CacheCommand::Import { cache, input } => {
            let cache = cache.or_else(|| config.get("cache").map(PathBuf::from));
            if server.is_none() && cache.is_none() {
                return Err(usage("cache import needs --cache (or a remote --server)"));
            }
            let client = connect(server, cache).await?;
            let jsonl = std::fs::read_to_string(&input)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", input.display())))?;
            let summary = client
                .cache_import(&CacheImportRequest { jsonl })
                .await
                .map_err(runtime)?;
            println!(
                "applied {} entries ({} older ignored, {} corrupt skipped)",
                summary.applied, summary.ignored_older, summary.skipped_corrupt
            );
        }
    }
    Ok(())
}

fn report_label(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string()
}

fn load_report(path: &Path) -> Result<EvalReport, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

async fn cmd_report(
    server: Option<&str>,
    config: &FileConfig,
    args: ReportArgs,
) -> Result<(), CliError> {
    let client = connect(server, None).await?;
    let format = resolve_format(args.format, config)?;
    if args.input.len() == 1 {
        let report = load_report(&args.input[0])?;
        let rendered = client
            .render(&RenderRequest { report, format })
            .await
            .map_err(runtime)?;
        print!("{}", rendered.text);
        if !rendered.text.ends_with('\n') {
            println!();
        }
        return Ok(());
    }
    if matches!(format, ReportFormat::Json) {
        return Err(usage("comparisons render as text; drop --format json"));
    }
    let mut runs = Vec::with_capacity(args.input.len());
    for path in &args.input {
        runs.push(LabeledReport { label: report_label(path), report: load_report(path)? });
    }
    let rendered = client
        .render_comparison(&ComparisonRequest { runs })
        .await
        .map_err(runtime)?;
    print!("{}", rendered.text);
    Ok(())
}

async fn cmd_serve(config: &FileConfig, args: ServeArgs) -> Result<(), CliError> {
    let cache = args.cache.clone().or_else(|| config.get("cache").map(PathBuf::from));
    let state =
        Arc::new(ServiceState::new(ServiceConfig { cache_path: cache }).map_err(runtime)?);
    for path in &args.corpus {
        let outcome = load_corpus(path, true).map_err(runtime)?;
        let name = corpus_name(path)?;
        eprintln!("loaded corpus {name:?} ({} sessions)", outcome.corpus.len());
        state.put_corpus(name, outcome.corpus);
    }
    let listener = tokio::net::TcpListener::bind(&args.addr).await.map_err(runtime)?;
    println!("listening on http://{}", listener.local_addr().map_err(runtime)?);
    usersim_service::serve(listener, state).await.map_err(runtime)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_text_is_percentages_to_one_decimal() {
        let stats = CorpusStats {
            n_sessions: 181,
            n_steps: 7923,
            frac_user_speak: 0.17632,
            frac_robot_speak: 0.13242,
            frac_robot_physical: 0.69126,
        };
        let text = stats_text("teach", None, &stats);
        assert!(text.contains("sessions: 181\n"));
        assert!(text.contains("user speak: 17.6%\n"));
        assert!(text.contains("robot speak: 13.2%\n"));
        assert!(text.contains("robot physical: 69.1%\n"));
        assert!(text.contains("(split: all)"));
    }

    #[test]
    fn transform_flags_map_to_specs() {
        let spec = build_transform(Some(CliTransform::NoMoves), &[], &[]).unwrap();
        assert_eq!(spec.mode, TransformMode::ExcludeMoves);
        assert!(!spec.move_verbs.is_empty(), "defaults kept when flag omitted");

        let spec = build_transform(
            Some(CliTransform::Selective),
            &["Forward".to_string(), "turn left".to_string()],
            &["RequestOtherInfo".to_string()],
        )
        .unwrap();
        assert!(spec.move_verbs.contains("forward"));
        assert!(spec.move_verbs.contains("turn left"));
        assert_eq!(spec.question_acts.len(), 1);

        assert!(build_transform(None, &[], &["NotAnAct".to_string()]).is_err());
    }

    #[test]
    fn cli_parses_an_evaluate_invocation() {
        let cli = Cli::parse_from([
            "usersim",
            "evaluate",
            "--corpus",
            "corpus.jsonl",
            "--policy",
            "llm",
            "--mode",
            "fs",
            "--backend",
            "cache-only",
            "--transform",
            "no-moves",
            "--seed",
            "9",
        ]);
        match cli.command {
            Some(Command::Evaluate(args)) => {
                assert!(matches!(args.policy, CliPolicy::Llm));
                assert!(matches!(args.llm.mode, Some(CliMode::Fs)));
                assert!(matches!(args.llm.backend, Some(CliBackend::CacheOnly)));
                assert!(matches!(args.transform, Some(CliTransform::NoMoves)));
                assert_eq!(args.seed, Some(9));
            }
            _ => panic!("expected evaluate"),
        }
    }
}
