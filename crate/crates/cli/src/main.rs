//! `patchhunt`: locate the commits that fix a CVE, score predictions and
//! report candidate statistics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use patchhunt_core::config::{ConfigOverlay, Provider, RunConfig};
use patchhunt_core::eval_harness::{emit_report, ReportFormat, Reportable};
use patchhunt_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "patchhunt", version, about = "Find the commits that fix a CVE in a git repository")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Flat key = value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shuffle batch order each round (keyed by --seed).
    #[arg(long, global = true)]
    shuffle: bool,
    /// NDJSON script of {"match", "response"} lines for --provider mock.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    rounds: Option<u32>,
    /// Keep every commit left after batch reduction instead of asking a final question.
    #[arg(long, global = true)]
    literal_algorithm1: bool,
    /// Worker threads (default: number of processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    provider: Option<Provider>,
    #[arg(long = "model", global = true)]
    model_id: Option<String>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Do not read or write the model response cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[arg(long, global = true)]
    template_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    max_candidates: Option<usize>,
    #[arg(long, global = true)]
    token_budget: Option<usize>,
    /// Re-fetch cached clones.
    #[arg(long, global = true)]
    refresh: bool,
    /// NDJSON file of vulnerability records.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Locate the patch commits of one CVE.
    Locate {
        cve_id: String,
        /// Local repository path or clone URL.
        #[arg(long)]
        repo: Option<String>,
    },
    /// Score an NDJSON predictions file.
    Eval {
        predictions: PathBuf,
        /// Top-K cutoffs, comma separated.
        #[arg(long = "k", value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Candidate-count statistics over a dataset.
    Stats {
        dataset: PathBuf,
        /// Directory holding the repositories, as `owner__name` or `name`.
        #[arg(long)]
        repos_dir: Option<PathBuf>,
    },
    /// Inspect or clear the cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Inspect,
    /// Remove `llm`, `repos` or `vuln`, or everything.
    Clear { section: Option<String> },
}

impl GlobalArgs {
    fn overlay(&self) -> ConfigOverlay {
        let flag = |b: bool| b.then_some(true);
        ConfigOverlay {
            cache_dir: self.cache_dir.clone(),
            out_dir: self.out_dir.clone(),
            batch_size: self.batch_size,
            rounds: self.rounds,
            max_candidates: self.max_candidates,
            token_budget: self.token_budget,
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            seed: self.seed,
            shuffle: flag(self.shuffle),
            provider: self.provider,
            template_dir: self.template_dir.clone(),
            mock_script: self.mock_script.clone(),
            dataset: self.dataset.clone(),
            jobs: self.jobs,
            literal_algorithm1: flag(self.literal_algorithm1),
            no_cache: flag(self.no_cache),
            refresh: flag(self.refresh),
            ..ConfigOverlay::default()
        }
    }
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &global.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ConfigOverlay = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.apply(&file);
    }
    cfg.apply(&global.overlay());
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(feature = "parallel")]
fn init_threads(jobs: Option<usize>) {
    if let Some(n) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_jobs: Option<usize>) {}

fn report_error(e: &PipelineError) -> ExitCode {
    eprintln!("error [{}]: {e}", e.module());
    eprintln!("hint: {}", e.hint());
    ExitCode::from(1)
}

fn human_bytes(n: u64) -> String {
    match n {
        n if n >= 1 << 20 => format!("{:.1} MiB", n as f64 / (1u64 << 20) as f64),
        n if n >= 1 << 10 => format!("{:.1} KiB", n as f64 / 1024.0),
        n => format!("{n} B"),
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli.global)?;
    init_threads(cfg.jobs);
    let code = match cli.command {
        Command::Locate { cve_id, repo } => match pipeline::locate(&cfg, &cve_id, repo.as_deref()) {
            Ok(out) => {
                print!("{}", out.summary);
                println!("outputs: {}", out.out_dir.display());
                if out.result.final_set.is_empty() {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => report_error(&e),
        },
        Command::Eval { predictions, k } => match pipeline::evaluate(&cfg, &predictions, &k) {
            Ok(reports) => {
                for r in &reports {
                    print!("{}", emit_report(Reportable::Eval(r), ReportFormat::Markdown));
                    println!();
                }
                println!("reports: {}", cfg.out_dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => report_error(&e),
        },
        Command::Stats { dataset, repos_dir } => {
            match pipeline::stats(&cfg, &dataset, repos_dir.as_deref().map(Path::new)) {
                Ok(out) => {
                    print!("{}", emit_report(Reportable::Stats(&out.stats), ReportFormat::Markdown));
                    println!("skipped: {}", out.skipped.len());
                    for s in &out.skipped {
                        println!("  {}: {}", s.cve_id, s.reason);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => report_error(&e),
            }
        }
        Command::Cache { action } => match action {
            CacheAction::Inspect => {
                println!("cache: {}", cfg.cache_dir.display());
                for s in pipeline::cache_inspect(&cfg) {
                    println!("  {:<6} {:>6} files  {}", s.name, s.files, human_bytes(s.bytes));
                }
                ExitCode::SUCCESS
            }
            CacheAction::Clear { section } => match pipeline::cache_clear(&cfg, section.as_deref()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => report_error(&e),
            },
        },
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [cli]: {e:#}");
            ExitCode::from(1)
        }
    }
}
