//! Command-line driver for MrAP: split, fit, impute, evaluate.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("propagation did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NotConverged { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrap", version, about = "Multi-relational attribute propagation for knowledge graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Overrides,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Dataset statistics: sizes, split counts, regression functions, paths.
    Stats,
    /// Write the train/dev/test manifest to `<out>/split.tsv`.
    Split,
    /// Fit regression models and write `<out>/models.tsv`.
    Fit {
        /// Also export training-pair differences for `DEP,INDEP[,RELATION[:reverse]]`
        /// (no relation means the inner model) to `<out>/differences.csv`.
        #[arg(long, value_name = "KEY")]
        differences: Option<String>,
    },
    /// Propagate and write `<out>/imputed.tsv` and `<out>/trace.csv`.
    Impute,
    /// Score MrAP and the baselines; write `<out>/report.csv` and `<out>/report.txt`.
    Eval {
        /// Also run and report the w/o Inner and w/o Cross variants.
        #[arg(long)]
        ablations: bool,
    },
    /// Run the full model and both ablations; write `<out>/ablation.csv`.
    Ablate,
}

/// Resolves the configuration, sizes the thread pool and dispatches.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    if let Some(n) = cfg.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Stats => commands::stats(&cfg, &mut std::io::stdout()),
        Command::Split => commands::split(&cfg),
        Command::Fit { differences } => commands::fit(&cfg, differences.as_deref()),
        Command::Impute => commands::impute(&cfg),
        Command::Eval { ablations } => commands::eval(&cfg, *ablations),
        Command::Ablate => commands::ablate(&cfg),
    }
}

pub(crate) fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}
