//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use grantgraph_core::labels::Split;
use grantgraph_core::model::ModelKind;

use crate::commands::{self, Context};
use crate::config::{parse_models, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "grantgraph", version, about = "Rank early-stage grant awardees by likelihood of a follow-on award")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; library defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Work directory holding all artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic raw corpus with planted relational signal.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Generator seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Switch off all planted signal.
        #[arg(long)]
        no_signal: bool,
    },
    /// Clean a raw award CSV.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Raw CSV; defaults to `<out>/raw.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build the per-split heterogeneous graphs.
    BuildGraph {
        #[command(flatten)]
        common: Common,
        /// Clean CSV; defaults to `<out>/clean.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Derive progression labels and temporal splits.
    Labels {
        #[command(flatten)]
        common: Common,
        /// Clean CSV; defaults to `<out>/clean.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train models, one checkpoint per model and seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
    },
    /// Evaluate trained checkpoints and write the summary table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
    },
    /// Write the top-k companies of a split ranked by one checkpoint.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Number of companies to list.
        #[arg(long)]
        k: usize,
        /// Model whose checkpoint is used.
        #[arg(long, default_value = "hgt")]
        models: String,
        /// Seed of the checkpoint; the first configured seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Explicit checkpoint file, overriding model and seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split whose companies are ranked.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run every stage; generates a synthetic corpus when no input is given.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
        /// Raw CSV to start from.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Selection {
    /// `all` or a comma-separated subset of hgt, rgcn, mlp.
    #[arg(long)]
    pub models: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Selection {
    fn apply(&self, cfg: &mut RunConfig) -> CliResult<Vec<ModelKind>> {
        if let Some(seed) = self.seed {
            cfg.train.seeds = vec![seed];
        }
        match &self.models {
            Some(list) => parse_models(list),
            None => Ok(cfg.eval.models.clone()),
        }
    }
}

fn context(common: &Common, cfg: RunConfig) -> CliResult<Context> {
    Context::new(cfg, &common.out)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            common,
            seed,
            no_signal,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            if no_signal {
                cfg.synth = cfg.synth.no_signal();
            }
            commands::synth(&context(&common, cfg)?)
        }
        Command::Ingest { common, input } => {
            let ctx = context(&common, RunConfig::load_or_default(common.config.as_deref())?)?;
            let input = input.unwrap_or_else(|| ctx.path(commands::RAW));
            commands::ingest(&ctx, &input).map(drop)
        }
        Command::BuildGraph { common, input } => {
            let ctx = context(&common, RunConfig::load_or_default(common.config.as_deref())?)?;
            let input = input.unwrap_or_else(|| ctx.path(commands::CLEAN));
            commands::build_graphs(&ctx, &input)
        }
        Command::Labels { common, input } => {
            let ctx = context(&common, RunConfig::load_or_default(common.config.as_deref())?)?;
            let input = input.unwrap_or_else(|| ctx.path(commands::CLEAN));
            commands::labels(&ctx, &input).map(drop)
        }
        Command::Train { common, select } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            let models = select.apply(&mut cfg)?;
            commands::train(&context(&common, cfg)?, &models).map(drop)
        }
        Command::Evaluate { common, select } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            let models = select.apply(&mut cfg)?;
            commands::evaluate_runs(&context(&common, cfg)?, &models).map(drop)
        }
        Command::Rank {
            common,
            k,
            models,
            seed,
            checkpoint,
            split,
        } => {
            let cfg = RunConfig::load_or_default(common.config.as_deref())?;
            let split = match Split::from_name(&split) {
                Some(s @ (Split::Train | Split::Val | Split::Test)) => s,
                _ => return Err(CliError::Config(format!("unknown split `{split}`"))),
            };
            let ctx = context(&common, cfg)?;
            let checkpoint = match checkpoint {
                Some(path) => path,
                None => {
                    let kinds = parse_models(&models)?;
                    let [kind] = kinds[..] else {
                        return Err(CliError::Config("rank takes exactly one model".into()));
                    };
                    let seed = seed.or_else(|| ctx.seeds().first().copied()).ok_or_else(|| {
                        CliError::Config("no seed given and none configured".into())
                    })?;
                    ctx.run_dir(kind, seed).join("checkpoint.json")
                }
            };
            commands::rank(&ctx, &checkpoint, split, k).map(drop)
        }
        Command::Run { common, select, input } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            let models = select.apply(&mut cfg)?;
            let ctx = context(&common, cfg)?;
            let raw = match input {
                Some(path) => path,
                None => {
                    commands::synth(&ctx)?;
                    ctx.path(commands::RAW)
                }
            };
            commands::ingest(&ctx, &raw)?;
            let clean = ctx.path(commands::CLEAN);
            commands::labels(&ctx, &clean)?;
            commands::build_graphs(&ctx, &clean)?;
            commands::train(&ctx, &models)?;
            commands::evaluate_runs(&ctx, &models)?;
            Ok(())
        }
    }
}
