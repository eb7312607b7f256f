//! Command-line driver: pipeline stages and experiment protocols.

pub mod config;
pub mod error;
pub mod experiments;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{BackendKind, RunConfig, VarianceStage};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "domex",
    version,
    about = "Domain extrapolation pipeline and generalization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker thread cap; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask the language model for plausible domains per class.
    Extrapolate,
    /// Turn domain knowledge into generation prompts.
    Prompt,
    /// Generate samples for every prompt.
    Synthesize {
        /// Append missing entries to an existing manifest.
        #[arg(long)]
        resume: bool,
    },
    /// Score samples against class prototypes and mark the kept ones.
    Filter,
    /// Train on the filtered manifest and evaluate against the target distribution.
    Train,
    /// Repeated bound-versus-true-risk trials.
    Bound,
    /// Risk against number of extrapolated domains, with a class-template control.
    Scale,
    /// Spread of final risk when one stage's randomness varies.
    Variance {
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_enum)]
        stage: Option<VarianceStage>,
    },
    /// Data-free training against a supervised baseline along a perturbation ladder.
    Datafree,
}

pub fn load_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &global.out {
        cfg.out_dir = o.clone();
    }
    if let Some(b) = global.backend {
        cfg.backend = b;
    }
    if let Some(t) = global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        cfg.orchestrator.in_flight = cfg.orchestrator.in_flight.min(t);
        cfg.synth.in_flight = cfg.synth.in_flight.min(t);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli.global)?;
    let force = cli.global.force;
    let work = || match cli.command {
        Command::Extrapolate => pipeline::cmd_extrapolate(&cfg, force),
        Command::Prompt => pipeline::cmd_prompt(&cfg, force),
        Command::Synthesize { resume } => pipeline::cmd_synthesize(&cfg, force, resume),
        Command::Filter => pipeline::cmd_filter(&cfg, force),
        Command::Train => pipeline::cmd_train(&cfg, force),
        Command::Bound => pipeline::cmd_bound(&cfg, force),
        Command::Scale => experiments::cmd_scale(&cfg, force),
        Command::Variance { repeats, stage } => experiments::cmd_variance(&cfg, force, repeats, stage),
        Command::Datafree => experiments::cmd_datafree(&cfg, force),
    };
    match cli.global.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}
