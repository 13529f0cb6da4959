use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use softscale::analysis::format_sig;
use softscale::inference::PromptConfig;
use softscale::runner::{
    cmd_analyze, cmd_evaluate, cmd_judge, cmd_sample, cmd_simulate, CommandSummary, DescriptorRef,
    EvaluateOutput, RunError, RunManifest, SimOptions, Source,
};
use softscale::simlab::SimConfig;
use softscale::{MethodId, Reduction, Task};
use tracing_subscriber::EnvFilter;

const EXIT_PARTIAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

/// Test-time scaling runs for soft-label and perspectivist annotation tasks.
#[derive(Parser)]
#[command(name = "softscale", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate N samples per problem into the cache.
    Sample(RunArgs),
    /// Rate every step of every cached sample with the judge model.
    Judge(RunArgs),
    /// Score the requested methods and write the report tables.
    Evaluate(RunArgs),
    /// Like evaluate, plus diversity, entropy and token-budget series.
    Analyze(RunArgs),
    /// Run the whole pipeline against the built-in simulation and check its
    /// properties.
    Simulate(SimArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Manifest JSON; other flags override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Dataset file (canonical JSONL, or a LeWiDi-style .json).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Labeled data for the most-frequent baseline.
    #[arg(long)]
    train_dataset: Option<PathBuf>,
    /// Built-in dataset name (CSC, MP, PAR, VEN) or a descriptor JSON file.
    #[arg(long)]
    descriptor: Option<String>,
    /// soft-label or perspectivist.
    #[arg(long)]
    task: Option<Task>,
    /// Sampler endpoint config JSON.
    #[arg(long)]
    endpoint: Option<PathBuf>,
    /// Judge endpoint config JSON.
    #[arg(long)]
    judge_endpoint: Option<PathBuf>,
    /// Step-score reduction: mean or product.
    #[arg(long)]
    reduction: Option<Reduction>,
    /// Samples per problem.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated methods, e.g. simple,model-averaging,bon-oracle.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<MethodId>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed, below 2^48.
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse cached results (default). `--resume=false` moves the old cache
    /// aside.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    resume: Option<bool>,
    #[arg(long, conflicts_with = "resume")]
    no_resume: bool,
    /// Write predictions only; for unlabeled test splits.
    #[arg(long)]
    submission: bool,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Add the dataset's definition section to prompts.
    #[arg(long)]
    include_definition: bool,
    /// Drop the perspectives section from prompts.
    #[arg(long)]
    no_perspectives: bool,
    /// Cache file; defaults to <out>/cache.jsonl.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Simulation config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated problems.
    #[arg(long)]
    problems: Option<usize>,
    /// Samples per problem.
    #[arg(long)]
    n: Option<usize>,
    /// Accuracy of the judge used for the main run.
    #[arg(long)]
    judge_accuracy: Option<f64>,
    /// Comma-separated judge accuracies for the accuracy sweep.
    #[arg(long, value_delimiter = ',')]
    accuracy_grid: Vec<f64>,
    /// Inject one transient failure per problem to exercise retries.
    #[arg(long)]
    faults: bool,
}

fn missing(flag: &str) -> anyhow::Error {
    anyhow::anyhow!("--{flag} is required without --manifest")
}

fn manifest(a: RunArgs) -> anyhow::Result<RunManifest> {
    let mut m = match &a.manifest {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest {
            dataset: a.dataset.clone().ok_or_else(|| missing("dataset"))?,
            train_dataset: None,
            descriptor: DescriptorRef::Name(
                a.descriptor.clone().ok_or_else(|| missing("descriptor"))?,
            ),
            task: Task::SoftLabel,
            endpoint: Source::Path(a.endpoint.clone().ok_or_else(|| missing("endpoint"))?),
            judge_endpoint: None,
            judge_reduction: Reduction::Mean,
            params: Default::default(),
            prompt: PromptConfig::default(),
            templates_dir: None,
            methods: vec![MethodId::Simple],
            out: a.out.clone().ok_or_else(|| missing("out"))?,
            seed: 0,
            resume: true,
            submission: false,
            cache: None,
        },
    };
    if let Some(v) = a.dataset {
        m.dataset = v;
    }
    if let Some(v) = a.train_dataset {
        m.train_dataset = Some(v);
    }
    if let Some(v) = a.descriptor {
        m.descriptor = DescriptorRef::Name(v);
    }
    if let Some(v) = a.task {
        m.task = v;
    }
    if let Some(v) = a.endpoint {
        m.endpoint = Source::Path(v);
    }
    if let Some(v) = a.judge_endpoint {
        m.judge_endpoint = Some(Source::Path(v));
    }
    if let Some(v) = a.reduction {
        m.judge_reduction = v;
    }
    if let Some(v) = a.n {
        m.params.n = v;
    }
    if !a.methods.is_empty() {
        m.methods = a.methods;
    }
    if let Some(v) = a.out {
        m.out = v;
    }
    if let Some(v) = a.seed {
        m.seed = v;
    }
    if let Some(v) = a.resume {
        m.resume = v;
    }
    if a.no_resume {
        m.resume = false;
    }
    m.submission |= a.submission;
    if let Some(v) = a.templates {
        m.templates_dir = Some(v);
    }
    m.prompt.include_definition |= a.include_definition;
    if a.no_perspectives {
        m.prompt.include_perspectives = false;
    }
    if let Some(v) = a.cache {
        m.cache = Some(v);
    }
    Ok(m)
}

fn sim_config(a: &SimArgs) -> anyhow::Result<SimConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.problems {
        cfg.n_problems = v;
    }
    if let Some(v) = a.n {
        cfg.n_samples = v;
    }
    if let Some(v) = a.judge_accuracy {
        cfg.judge_accuracy = v;
    }
    Ok(cfg)
}

fn report_summary(name: &str, s: &CommandSummary) -> u8 {
    println!(
        "{name}: {} requested, {} reused, {} written, {} failed",
        s.requested,
        s.reused,
        s.written,
        s.failures.len()
    );
    for f in s.failures.iter().take(10) {
        eprintln!("  failed {f}");
    }
    if s.failures.len() > 10 {
        eprintln!("  ... and {} more", s.failures.len() - 10);
    }
    s.exit_code() as u8
}

fn report_output(out: EvaluateOutput) -> u8 {
    match out {
        EvaluateOutput::Report(report, files) => {
            println!("{} {} ({})", report.dataset, report.task, report.metric);
            println!(
                "{:<16} {:>12} {:>12} {:>12} {:>8}",
                "method", "mean", "ci_low", "ci_high", "problems"
            );
            for (m, s) in &report.per_method {
                println!(
                    "{:<16} {:>12} {:>12} {:>12} {:>8}",
                    m.as_str(),
                    format_sig(s.mean_distance),
                    format_sig(s.ci_low),
                    format_sig(s.ci_high),
                    s.n_problems
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        EvaluateOutput::Predictions(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    0
}

fn config_error(e: impl std::fmt::Display) -> u8 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn run_error(e: RunError) -> u8 {
    eprintln!("error: {e}");
    e.exit_code() as u8
}

async fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Sample(a) => match manifest(a) {
            Ok(m) => cmd_sample(&m)
                .await
                .map_or_else(run_error, |s| report_summary("sample", &s)),
            Err(e) => config_error(e),
        },
        Command::Judge(a) => match manifest(a) {
            Ok(m) => cmd_judge(&m)
                .await
                .map_or_else(run_error, |s| report_summary("judge", &s)),
            Err(e) => config_error(e),
        },
        Command::Evaluate(a) => match manifest(a) {
            Ok(m) => cmd_evaluate(&m).map_or_else(run_error, report_output),
            Err(e) => config_error(e),
        },
        Command::Analyze(a) => match manifest(a) {
            Ok(m) => cmd_analyze(&m).map_or_else(run_error, report_output),
            Err(e) => config_error(e),
        },
        Command::Simulate(a) => {
            let cfg = match sim_config(&a) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let mut opts = SimOptions {
                faults: a.faults,
                ..SimOptions::default()
            };
            if !a.accuracy_grid.is_empty() {
                opts.accuracy_grid = a.accuracy_grid;
            }
            match cmd_simulate(&cfg, &a.out, &opts).await {
                Ok(outcome) => {
                    for c in &outcome.checks {
                        let tag = if c.passed { "PASS" } else { "FAIL" };
                        println!("[{tag}] {}: {}", c.name, c.detail);
                    }
                    println!("report: {}", outcome.report_dir.display());
                    if outcome.passed() {
                        0
                    } else {
                        EXIT_PARTIAL
                    }
                }
                Err(e) => run_error(e),
            }
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    ExitCode::from(run(cli).await)
}
