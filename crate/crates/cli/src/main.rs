//! `maims`: run, evaluate and inspect scale-grounded classification runs.
//!
//! Exit codes: 0 success, 1 validation failure or missing record,
//! 2 configuration error, 3 backend failure that aborted a run.

mod commands;
mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use maims_core::Mode;

use commands::{CmdResult, ExitCode as _, Failure, EXIT_CONFIG};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "maims",
    version,
    about = "Scale-grounded mental-health classification with LLM roles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Only process the first N posts.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Discriminator rejections tolerated per stage.
    #[arg(long)]
    max_retries: Option<u32>,
    /// Score failed records with their fallback label instead of dropping them.
    #[arg(long)]
    include_failed: bool,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the response cache.
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
    /// Directory with prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Output root; runs go to <out>/<task_id>/<mode>/<timestamp>/.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, mode: Option<Mode>) -> Result<RunConfig, Failure> {
        let over = Overrides {
            mode,
            n: self.n,
            workers: self.workers,
            max_retries: self.max_retries,
            include_failed: self.include_failed,
            cache_dir: self.cache_dir.clone(),
            no_cache: self.no_cache,
            templates: self.templates.clone(),
            output_dir: self.out.clone(),
        };
        RunConfig::load(&self.config, &over).exit(EXIT_CONFIG)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a corpus and write traces and a report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        /// Serve every role from a recorded script instead of the configured backends.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Re-score an existing trace file.
    Eval {
        traces: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Write the report here instead of printing it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run full, no_scale and no_discriminator on the first N posts.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Check a scale, task or corpus file.
    Validate {
        #[arg(long)]
        scale: Option<PathBuf>,
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Print one record of a trace file.
    ShowTrace {
        traces: PathBuf,
        post_id: String,
        /// Scale file used to show option texts.
        #[arg(long)]
        scale: Option<PathBuf>,
    },
    /// Inspect or export the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Args)]
struct CacheLocation {
    #[arg(long, required_unless_present = "config")]
    cache_dir: Option<PathBuf>,
    /// Take the cache directory from this config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CacheLocation {
    fn resolve(&self) -> Result<PathBuf, Failure> {
        if let Some(dir) = &self.cache_dir {
            return Ok(dir.clone());
        }
        let path = self
            .config
            .as_deref()
            .expect("clap requires one of the two");
        RunConfig::load(path, &Overrides::default())
            .exit(EXIT_CONFIG)?
            .cache_dir
            .ok_or_else(|| Failure {
                code: EXIT_CONFIG,
                error: anyhow!("{}: no cache_dir configured", path.display()),
            })
    }
}

#[derive(Subcommand)]
enum CacheAction {
    Stats {
        #[command(flatten)]
        location: CacheLocation,
    },
    Clear {
        #[command(flatten)]
        location: CacheLocation,
    },
    /// Write every cached response as a mock script for offline replay.
    ExportScript {
        #[command(flatten)]
        location: CacheLocation,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Run {
            common,
            mode,
            replay,
        } => commands::cmd_run(&common.load(mode)?, replay.as_deref()),
        Command::Eval {
            traces,
            common,
            report,
        } => commands::cmd_eval(&common.load(None)?, &traces, report.as_deref()),
        Command::Ablate { common, replay } => {
            let cfg = common.load(None)?;
            let n = cfg.n.unwrap_or(100);
            commands::cmd_ablate(&cfg, n, replay.as_deref())
        }
        Command::Validate {
            scale,
            task,
            corpus,
        } => commands::cmd_validate(scale.as_deref(), task.as_deref(), corpus.as_deref()),
        Command::ShowTrace {
            traces,
            post_id,
            scale,
        } => commands::cmd_show_trace(&traces, &post_id, scale.as_deref()),
        Command::Cache { action } => match action {
            CacheAction::Stats { location } => commands::cmd_cache_stats(&location.resolve()?),
            CacheAction::Clear { location } => commands::cmd_cache_clear(&location.resolve()?),
            CacheAction::ExportScript { location, out } => {
                commands::cmd_cache_export(&location.resolve()?, Path::new(&out))
            }
        },
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
