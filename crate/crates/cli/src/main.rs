mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scopetree::gateway::{FixtureStore, Gateway, GatewayMode, HttpTransport};
use scopetree::hierarchy::{TopicPath, TopicTree, TreeDocument};
use scopetree::metrics::{build_run_report, emit_report, read_annotations_csv, ReportFormat};
use scopetree::prompt::{PromptStrategy, DEFAULT_K};
use scopetree::run::{
    expand_node, load_run_dir, run_experiment_with_id, run_fixture_store, CountPolicy,
    ExperimentConfig, GenerationSettings, JsonlLog, RecordStatus, RunStore,
};
use scopetree::testsuite::TestSuite;
use scopetree_service::{ServiceConfig, ANNOTATIONS_FILE};
use tracing_subscriber::EnvFilter;
use uuid::Uuid;

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "scopetree",
    version,
    about = "Elicit and evaluate topic hierarchies with a language model"
)]
struct Cli {
    /// TOML settings file (endpoint, api_key_env, model, temperature, ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy against every prompt target of a suite.
    Run(RunArgs),
    /// Generate children for one node of a tree file.
    Expand(ExpandArgs),
    /// Compute accuracy, error and agreement tables for an annotated run.
    Report(ReportArgs),
    /// Print the composition of a suite.
    Describe(DescribeArgs),
    /// Serve the HTTP API (and the UI bundle, if given).
    Serve(ServeArgs),
}

#[derive(Args)]
struct GatewayArgs {
    /// live, record or replay.
    #[arg(long, default_value = "replay")]
    mode: GatewayMode,
    /// Fixture directory for replay (and record) mode.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Chat-completions endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Suite file; the bundled Computer Science suite when omitted.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, default_value = "current,root,full")]
    strategies: String,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Run store directory; the run goes to OUT/<run_id>.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// strict drops short lists; lenient keeps them.
    #[arg(long, default_value = "strict")]
    count_policy: CountPolicy,
    /// Append a numbered-list instruction to every prompt.
    #[arg(long)]
    format_hint: bool,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct ExpandArgs {
    /// Tree file; created when missing and PATH is a single label.
    #[arg(long)]
    tree: PathBuf,
    /// Slash-separated labels from the root, e.g. "Computer Science/Data Structures".
    #[arg(long)]
    path: String,
    #[arg(long, default_value = "full")]
    strategy: PromptStrategy,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value = "lenient")]
    count_policy: CountPolicy,
    #[arg(long)]
    format_hint: bool,
    /// Record log; defaults to expansions.jsonl next to the tree file.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (containing manifest.json and records.jsonl).
    #[arg(long)]
    run: PathBuf,
    /// Annotation CSV; defaults to RUN/annotations.csv.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// markdown or csv.
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Output directory; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
}

#[derive(Args)]
struct ServeArgs {
    /// Store directory holding trees/, runs/ and fixtures/.
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Default mode for expand requests: live or replay.
    #[arg(long, default_value = "replay")]
    mode: GatewayMode,
    /// Fixture directory; defaults to STORE/fixtures.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
    /// Built UI bundle to serve under /.
    #[arg(long)]
    ui: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Run(args) => run(&config, args),
        Command::Expand(args) => expand(&config, args),
        Command::Report(args) => report(args),
        Command::Describe(args) => describe(args),
        Command::Serve(args) => serve(&config, args),
    }
}

fn load_suite(path: Option<&Path>) -> Result<TestSuite> {
    match path {
        Some(p) => {
            TestSuite::from_path(p).with_context(|| format!("cannot load suite {}", p.display()))
        }
        None => Ok(TestSuite::computer_science()),
    }
}

fn http_transport(config: &FileConfig, args: &GatewayArgs) -> Result<Arc<HttpTransport>> {
    let endpoint = args.endpoint.clone().unwrap_or_else(|| config.endpoint());
    let key_env = args
        .api_key_env
        .clone()
        .unwrap_or_else(|| config.api_key_env());
    Ok(Arc::new(HttpTransport::from_env(endpoint, &key_env)?))
}

fn open_fixtures(dir: &Path, must_exist: bool) -> Result<Arc<FixtureStore>> {
    if must_exist && !dir.is_dir() {
        bail!("fixture directory {} does not exist", dir.display());
    }
    Ok(Arc::new(FixtureStore::open(dir)?))
}

/// `record_dir` is where record mode writes when `--fixtures` is absent.
fn build_gateway(
    config: &FileConfig,
    args: &GatewayArgs,
    record_dir: Option<PathBuf>,
) -> Result<Gateway> {
    Ok(match args.mode {
        GatewayMode::Live => Gateway::live(http_transport(config, args)?),
        GatewayMode::Record => {
            let dir = args
                .fixtures
                .clone()
                .or(record_dir)
                .context("record mode needs --fixtures")?;
            Gateway::recording(http_transport(config, args)?, open_fixtures(&dir, false)?)
        }
        GatewayMode::Replay => {
            let dir = args
                .fixtures
                .as_ref()
                .context("replay mode needs --fixtures")?;
            Gateway::replay(open_fixtures(dir, true)?)
        }
    })
}

fn run(config: &FileConfig, args: RunArgs) -> Result<()> {
    let suite = load_suite(args.suite.as_deref())?;
    let store = RunStore::open(&args.out)?;
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| Uuid::new_v4().to_string());
    if store.run_dir(&run_id).exists() {
        bail!("run {run_id} already exists in {}", args.out.display());
    }
    let record_dir = (args.gateway.mode == GatewayMode::Record)
        .then(|| run_fixture_store(&store, &run_id).map(|f| f.dir().to_path_buf()))
        .transpose()?;
    let gateway = build_gateway(config, &args.gateway, record_dir)?;
    let experiment = ExperimentConfig {
        strategies: PromptStrategy::parse_list(&args.strategies)?,
        settings: GenerationSettings {
            k: args.k,
            params: config.params(),
            format_hint: args.format_hint || config.format_hint.unwrap_or(false),
            count_policy: args.count_policy,
        },
        parallelism: args.parallelism.unwrap_or_else(|| config.parallelism()),
    };
    let outcome = run_experiment_with_id(&suite, &experiment, &gateway, &store, &run_id)?;
    let m = &outcome.manifest;
    println!("run {} ({} mode)", m.run_id, m.mode);
    println!(
        "suite {} ({} prompt targets)",
        m.suite_name, m.prompt_targets
    );
    for s in &m.strategies {
        let mine: Vec<_> = outcome
            .records
            .iter()
            .filter(|r| r.strategy == *s)
            .collect();
        let ok = mine.iter().filter(|r| r.status == RecordStatus::Ok).count();
        let subtopics: usize = mine.iter().map(|r| r.subtopics.len()).sum();
        println!(
            "  {:<26} {} records, {} ok, {} subtopics",
            s.display_name(),
            mine.len(),
            ok,
            subtopics
        );
    }
    for (status, n) in &m.status_counts {
        if *status != RecordStatus::Ok && *n > 0 {
            println!(
                "  {n} record(s) with status {}",
                serde_json::to_string(status)?.trim_matches('"')
            );
        }
    }
    println!("written to {}", store.run_dir(&m.run_id).display());
    Ok(())
}

fn expand(config: &FileConfig, args: ExpandArgs) -> Result<()> {
    let path = TopicPath::parse(&args.path)?;
    let (mut tree, keep_ids) = if args.tree.exists() {
        let text = fs::read_to_string(&args.tree)
            .with_context(|| format!("cannot read {}", args.tree.display()))?;
        let doc = TreeDocument::from_json(&text)
            .with_context(|| format!("bad tree file {}", args.tree.display()))?;
        let tree = TopicTree::from_document(&doc)?;
        let violations = tree.validate();
        if !violations.is_empty() {
            bail!(
                "{} is invalid: {}",
                args.tree.display(),
                serde_json::to_string(&violations)?
            );
        }
        (tree, doc.root.id.is_some())
    } else if path.level() == 1 {
        (TopicTree::new(path.current())?, false)
    } else {
        bail!(
            "{} does not exist; start a new tree with a one-label --path",
            args.tree.display()
        );
    };

    let gateway = build_gateway(config, &args.gateway, None)?;
    let settings = GenerationSettings {
        k: args.k,
        params: config.params(),
        format_hint: args.format_hint || config.format_hint.unwrap_or(false),
        count_policy: args.count_policy,
    };
    let log_path = args.log.clone().unwrap_or_else(|| {
        args.tree
            .parent()
            .unwrap_or(Path::new("."))
            .join("expansions.jsonl")
    });
    let sink = JsonlLog::open_append(&log_path)?;
    let expansion = expand_node(&mut tree, &path, args.strategy, &settings, &gateway, &sink)?;

    let doc = if keep_ids {
        tree.to_document_with_ids()
    } else {
        tree.to_document()
    };
    let tmp = args.tree.with_extension("tmp");
    fs::write(&tmp, doc.to_json())?;
    fs::rename(&tmp, &args.tree)?;

    let record = &expansion.record;
    println!("{}", record.prompt);
    for id in &expansion.added {
        println!(
            "  + {}",
            tree.node(*id).map(|n| n.label.as_str()).unwrap_or_default()
        );
    }
    for r in &expansion.rejected {
        println!("  - {} ({:?})", r.label, r.reason);
    }
    if record.status != RecordStatus::Ok {
        let detail = record.error.as_deref().unwrap_or_default();
        if record.status == RecordStatus::TransportError || expansion.added.is_empty() {
            bail!("expansion failed: {detail}");
        }
        eprintln!("warning: {detail}");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let (manifest, records) = load_run_dir(&args.run)?;
    let ann_path = args
        .annotations
        .clone()
        .unwrap_or_else(|| args.run.join(ANNOTATIONS_FILE));
    let file = fs::File::open(&ann_path)
        .with_context(|| format!("cannot open annotations {}", ann_path.display()))?;
    let annotations = read_annotations_csv(file)?;
    let run_report = build_run_report(&manifest, &records, &annotations)?;
    let docs = emit_report(
        &run_report.strategies,
        run_report.agreement.as_ref(),
        args.format,
    );
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for d in &docs {
                fs::write(dir.join(&d.file_name), &d.content)?;
                println!("wrote {}", dir.join(&d.file_name).display());
            }
        }
        None => {
            for d in &docs {
                if docs.len() > 1 {
                    println!("# {}", d.file_name);
                }
                print!("{}", d.content);
            }
        }
    }
    Ok(())
}

fn describe(args: DescribeArgs) -> Result<()> {
    let suite = load_suite(args.suite.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&suite.describe(args.k))?);
    Ok(())
}

fn serve(config: &FileConfig, args: ServeArgs) -> Result<()> {
    if args.mode == GatewayMode::Record {
        bail!("serve supports --mode live or replay");
    }
    let fixtures_dir = args
        .fixtures
        .clone()
        .unwrap_or_else(|| args.store.join(scopetree::run::FIXTURES_DIR));
    let fixtures = open_fixtures(&fixtures_dir, false)?;
    let gw_args = GatewayArgs {
        mode: GatewayMode::Live,
        fixtures: None,
        endpoint: args.endpoint.clone(),
        api_key_env: args.api_key_env.clone(),
    };
    // Live calls are recorded so the same expansions replay later.
    let live = match http_transport(config, &gw_args) {
        Ok(t) => Some(Gateway::recording(t, fixtures.clone())),
        Err(e) if args.mode == GatewayMode::Live => return Err(e),
        Err(e) => {
            eprintln!("warning: live mode unavailable: {e:#}");
            None
        }
    };
    let service = ServiceConfig {
        store: args.store.clone(),
        default_mode: args.mode,
        live,
        replay: Some(Gateway::replay(fixtures)),
        params: config.params(),
        ui_dir: args.ui.clone(),
    };
    eprintln!("serving {} on http://{}", args.store.display(), args.bind);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(scopetree_service::serve(service, &args.bind))?;
    Ok(())
}
