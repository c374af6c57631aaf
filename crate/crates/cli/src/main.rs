//! Command-line surface for the slant-measurement pipeline. One config file
//! drives every stage; each subcommand reads its inputs, writes artifacts
//! under the output directory, and exits nonzero on failure.

mod config;
mod stages;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use slantscope::harvest::Cache;
use slantscope::mock::{serve_blocking, Fixtures};

use config::RunConfig;
use stages::Ctx;

#[derive(Parser)]
#[command(
    name = "slantscope",
    version,
    about = "Measures political slant in text-generating models and corpora"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured pipeline seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Response cache directory (default: <out>/cache).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Worker threads for network stages.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Plan without touching the network.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the partisan bigram lexicon from the labeled corpus.
    Lexicon,
    /// Score corpora and harvested model output against the lexicon.
    Slant,
    /// Plan and execute the model interviews.
    Harvest,
    /// Judge-annotate harvested output: viewpoints and sentiment.
    Annotate,
    /// Administer the configured orientation test banks.
    Tests,
    /// Combine the four method tables into the ranking and report.
    Aggregate,
    /// Correlate corpus-unit slant with published ratings.
    Validate,
    /// Serve canned completions for offline runs.
    MockServe {
        /// Fixture rules (JSON).
        #[arg(long)]
        fixtures: PathBuf,
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::MockServe { fixtures, addr } = &cli.command {
        let fixtures = Fixtures::load(fixtures).context("loading mock fixtures")?;
        serve_blocking(fixtures, addr).context("serving mock completions")?;
        return Ok(());
    }

    let config_path = cli
        .config
        .as_ref()
        .context("--config is required for this subcommand")?;
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let cache_dir = cli
        .cache
        .or_else(|| config.cache.clone())
        .unwrap_or_else(|| out.join("cache"));
    let cache = Cache::open(&cache_dir).context("opening the response cache")?;
    let concurrency = cli
        .concurrency
        .or_else(|| config.harvest.as_ref().map(|h| h.concurrency))
        .unwrap_or(4)
        .max(1);
    let ctx = Ctx {
        seed: config.seed,
        config,
        out,
        cache,
        concurrency,
        dry_run: cli.dry_run,
    };

    match cli.command {
        Command::Lexicon => stages::lexicon(&ctx).context("lexicon stage"),
        Command::Slant => stages::slant(&ctx).context("slant stage"),
        Command::Harvest => stages::harvest(&ctx).context("harvest stage"),
        Command::Annotate => stages::annotate(&ctx).context("annotate stage"),
        Command::Tests => stages::tests(&ctx).context("tests stage"),
        Command::Aggregate => stages::aggregate(&ctx).context("aggregate stage"),
        Command::Validate => stages::validate(&ctx).context("validate stage"),
        Command::MockServe { .. } => unreachable!("handled above"),
    }
}
