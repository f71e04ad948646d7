use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guide_core::config::{Config, ConfigError, Providers};
use guide_core::cost::{
    aggregate, annotation_profile, benchmark_total, cost_of, read_ledger, retrieval_profile, CostError, CostReport, Ledger,
    PriceTable, Regime,
};
use guide_core::eval::{
    coverage_stats, meaningful_metrics, read_jsonl, stage1_metrics, topic_stats, EvalError, FilterOutcome, FrameLabel,
    TopicScore, VideoLabel, VideoVerdict,
};
use guide_core::inject::{render_mode_a_grounding, render_mode_a_worker, render_mode_b_system, InjectError};
use guide_core::knowledge::{KnowledgeBundle, DEFAULT_GROUNDING_K};
use guide_core::pipeline::{Pipeline, PipelineError, RetrievalArtifact, Stage, TaskWorkspace};
use guide_core::provider::{ChatGateway, ProviderError};
use guide_core::retrieval::{RetrievalError, RetrievalResult, TaskSpec};

#[derive(Parser)]
#[command(name = "guide", version, about = "Learn GUI task knowledge from tutorial videos")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage that is not already complete.
    Run(StageArgs),
    /// Query generation, search and the three-stage filter.
    Retrieve(StageArgs),
    /// Transcripts, keyframes and element graphs for the selected videos.
    Perceive(StageArgs),
    /// Frame-pair annotation.
    Annotate(StageArgs),
    /// Planning and grounding knowledge from the annotations.
    Decompose(StageArgs),
    /// Render a knowledge bundle into an agent prompt.
    Inject(InjectArgs),
    /// Quality metrics from label files.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Token and dollar accounting.
    Cost(CostArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workspace: PathBuf,
    /// Task JSON {task_id, instruction, application}; defaults to the
    /// workspace's task.json.
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectMode {
    AWorker,
    AGrounding,
    B,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long, value_enum)]
    mode: InjectMode,
    #[arg(long, conflicts_with = "workspace", required_unless_present = "workspace")]
    bundle: Option<PathBuf>,
    /// Read knowledge.json from a task workspace.
    #[arg(long)]
    workspace: Option<PathBuf>,
    #[arg(long)]
    element_desc: Option<String>,
    /// Tool schema file placed before the knowledge section (mode b).
    #[arg(long)]
    tools: Option<PathBuf>,
    /// Base worker guidelines (mode a-worker).
    #[arg(long)]
    guidelines: Option<PathBuf>,
    /// Grounding elements kept per video; 0 injects planning only.
    #[arg(long, default_value_t = DEFAULT_GROUNDING_K)]
    grounding_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Meaningful filter against frame labels.
    Meaningful {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// GUI classification against video labels.
    Stage1 {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Topic accuracy scores.
    Topics {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Retrieval coverage over task workspaces or result files.
    Coverage {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct CostArgs {
    /// Reference per-video annotation profile.
    #[arg(long, value_parser = parse_regime)]
    profile: Option<Regime>,
    /// Reference per-task retrieval profile.
    #[arg(long)]
    retrieval: bool,
    /// Benchmark-scale totals.
    #[arg(long)]
    benchmark: bool,
    #[arg(long, default_value_t = 361)]
    tasks: u64,
    #[arg(long, default_value_t = 299)]
    covered: u64,
    #[arg(long, default_value_t = 0.427)]
    two_video: f64,
    /// Usage ledger written by a run.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Only ledger records for this video.
    #[arg(long, requires = "ledger")]
    scope: Option<String>,
    /// Price table JSON {model: {in_per_1m, out_per_1m}}.
    #[arg(long, alias = "prices")]
    pricing: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse()
}

/// Failure classes, each with its own exit status.
enum Failure {
    Usage(String),
    Setup(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Setup(_) => 2,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::MissingArtifact { .. }
            | PipelineError::TaskMismatch { .. }
            | PipelineError::Retrieval(RetrievalError::InvalidTask(_)) => Failure::Usage(err.to_string()),
            other => Failure::Setup(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(err: ConfigError) -> Self {
        Failure::Setup(err.to_string())
    }
}

impl From<ProviderError> for Failure {
    fn from(err: ProviderError) -> Self {
        Failure::Setup(err.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(err: EvalError) -> Self {
        Failure::Usage(err.to_string())
    }
}

impl From<CostError> for Failure {
    fn from(err: CostError) -> Self {
        Failure::Usage(err.to_string())
    }
}

impl From<InjectError> for Failure {
    fn from(err: InjectError) -> Self {
        Failure::Usage(err.to_string())
    }
}

fn read_input<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let raw = std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&raw).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn stage_command(args: &StageArgs, stage: Option<Stage>) -> Result<(), Failure> {
    let config = Config::load(&args.config)?;
    let workspace = TaskWorkspace::new(&args.workspace);
    let task: TaskSpec = match &args.task {
        Some(path) => read_input(path)?,
        None if workspace.task().exists() => read_input(&workspace.task())?,
        None => return Err(Failure::Usage("--task is required for a new workspace".into())),
    };
    task.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let providers = Providers::from_config(&config.providers)?;
    std::fs::create_dir_all(workspace.root()).map_err(|e| Failure::Setup(e.to_string()))?;
    let ledger = Ledger::with_sink(&workspace.ledger()).map_err(|e| Failure::Setup(e.to_string()))?;
    let mut gateway = ChatGateway::new(providers.chat.clone(), Arc::new(ledger))
        .with_retry(config.providers.chat.retry)
        .with_max_in_flight(config.providers.chat.max_in_flight);
    if let Some(bucket) = Providers::rate_limiter(&config.providers.chat) {
        gateway = gateway.with_rate_limit(bucket);
    }
    let pipeline = Pipeline { config: &config, providers: &providers, gateway: &gateway, workspace };
    match stage {
        None => {
            let summary = pipeline.run(&task)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Some(stage) => {
            pipeline.run_single(stage, &task)?;
            println!("{stage}: done");
        }
    }
    Ok(())
}

fn inject_command(args: &InjectArgs) -> Result<(), Failure> {
    let path = match (&args.bundle, &args.workspace) {
        (Some(b), _) => b.clone(),
        (None, Some(ws)) => TaskWorkspace::new(ws).knowledge(),
        (None, None) => return Err(Failure::Usage("--bundle or --workspace is required".into())),
    };
    let bundle: KnowledgeBundle = read_input(&path)?;
    let bundle = bundle.with_grounding_k(args.grounding_k);
    let rendered = match args.mode {
        InjectMode::AWorker => {
            let base = match &args.guidelines {
                Some(p) => read_text(p)?,
                None => String::new(),
            };
            render_mode_a_worker(&bundle, &base)
        }
        InjectMode::AGrounding => {
            let desc = args.element_desc.as_deref().ok_or_else(|| Failure::Usage("--element-desc is required".into()))?;
            render_mode_a_grounding(&bundle, desc)?
        }
        InjectMode::B => {
            let tools = match &args.tools {
                Some(p) => read_text(p)?,
                None => String::new(),
            };
            render_mode_b_system(&bundle, &tools)
        }
    };
    emit(&rendered.text, args.out.as_deref())
}

fn load_results(dir: &Path) -> Result<Vec<RetrievalResult>, Failure> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            let candidates = TaskWorkspace::new(&path).candidates();
            if candidates.exists() {
                files.push(candidates);
            }
        } else if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    files
        .iter()
        .map(|f| {
            let value: serde_json::Value = read_input(f)?;
            serde_json::from_value::<RetrievalArtifact>(value.clone())
                .map(|a| a.outcome.result)
                .or_else(|_| serde_json::from_value::<RetrievalResult>(value))
                .map_err(|e| Failure::Usage(format!("{}: {e}", f.display())))
        })
        .collect()
}

fn eval_command(cmd: &EvalCommand) -> Result<(), Failure> {
    let text = match cmd {
        EvalCommand::Meaningful { labels, outcomes, json } => {
            let labels: Vec<FrameLabel> = read_jsonl(labels)?;
            let outcomes: Vec<FilterOutcome> = read_jsonl(outcomes)?;
            let report = meaningful_metrics(&labels, &outcomes)?;
            if *json { to_json(&report) } else { report.to_table() }
        }
        EvalCommand::Stage1 { labels, verdicts, json } => {
            let labels: Vec<VideoLabel> = read_jsonl(labels)?;
            let verdicts: Vec<VideoVerdict> = read_jsonl(verdicts)?;
            let report = stage1_metrics(&labels, &verdicts)?;
            if *json { to_json(&report) } else { report.to_table() }
        }
        EvalCommand::Topics { scores, json } => {
            let scores: Vec<TopicScore> = read_jsonl(scores)?;
            let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
            let stats = topic_stats(&values)?;
            if *json {
                to_json(&stats)
            } else {
                format!("topics {}  mean {:.3}  acceptable {:.2}%\n", stats.n, stats.mean, stats.acceptable_rate * 100.0)
            }
        }
        EvalCommand::Coverage { results, json } => {
            let stats = coverage_stats(&load_results(results)?);
            if *json {
                to_json(&stats)
            } else {
                format!(
                    "tasks {}  covered {} ({:.1}%)  two-video {:.1}%  videos {}\n",
                    stats.tasks, stats.covered, stats.covered_pct, stats.two_video_pct, stats.total_videos
                )
            }
        }
    };
    emit(&text, None)
}

fn cost_command(args: &CostArgs) -> Result<(), Failure> {
    let prices = match &args.pricing {
        Some(p) => PriceTable::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => PriceTable::reference(),
    };
    let mut reports: Vec<(String, CostReport)> = Vec::new();
    let profile = args.profile.or((!args.retrieval && !args.benchmark && args.ledger.is_none()).then_some(Regime::Typical));
    if let Some(regime) = profile {
        reports.push((format!("{regime:?} annotation profile").to_lowercase(), cost_of(&annotation_profile(regime), &prices)?));
    }
    if args.retrieval {
        reports.push(("retrieval profile".into(), cost_of(&retrieval_profile(), &prices)?));
    }
    if args.benchmark {
        let per_task = cost_of(&retrieval_profile(), &prices)?.total_usd;
        let per_video = cost_of(&annotation_profile(Regime::Typical), &prices)?.total_usd;
        let totals = benchmark_total(args.tasks, args.covered, args.two_video, per_task, per_video)?;
        reports.push((format!("benchmark ({} tasks, {} videos)", totals.tasks, totals.videos), totals.to_report()));
    }
    if let Some(path) = &args.ledger {
        let records = read_ledger(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let records: Vec<_> = records.into_iter().filter(|r| args.scope.is_none() || r.scope == args.scope).collect();
        reports.push((format!("ledger {}", path.display()), cost_of(&aggregate(&records), &prices)?));
    }
    let text = if args.json {
        let map: serde_json::Map<String, serde_json::Value> =
            reports.iter().map(|(k, r)| (k.clone(), serde_json::to_value(r).expect("report serializes"))).collect();
        to_json(&map)
    } else {
        reports.iter().map(|(k, r)| format!("# {k}\n{}", r.to_table())).collect::<Vec<_>>().join("\n")
    };
    emit(&text, None)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();

    let result = match &cli.command {
        Command::Run(a) => stage_command(a, None),
        Command::Retrieve(a) => stage_command(a, Some(Stage::Retrieve)),
        Command::Perceive(a) => stage_command(a, Some(Stage::Perceive)),
        Command::Annotate(a) => stage_command(a, Some(Stage::Annotate)),
        Command::Decompose(a) => stage_command(a, Some(Stage::Decompose)),
        Command::Inject(a) => inject_command(a),
        Command::Eval { which } => eval_command(which),
        Command::Cost(a) => cost_command(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Setup(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
