//! `natpred`: the nationality prediction pipeline as subcommands.
//!
//! ```text
//! natpred [--config run.json] [--seed N] [--out DIR] <command>
//!   prepare                       split the raw corpus, write manifest
//!   train   --model svm|fasttext  fit a model on the train split
//!   predict --model ... [--k 5]   ranked predictions as JSON Lines
//!   llm     --strategy ...        prompting pipeline over a split
//!   eval    --dump FILE ...       metrics bundle from prediction dumps
//!   report  [--bundle FILE ...]   markdown tables and plot CSVs
//! ```
//!
//! Outputs live under `--out`: `data/`, `models/<model>/`, `predictions/`,
//! `traces/`, `eval/` and `report/`. Exit status is 0 on success, 2 for
//! config errors, 3 for data errors and 4 for provider errors.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use natpred_core::evaluation::LabelMode;
use natpred_core::taxonomy::Granularity;
use natpred_llm::StrategyKind;

use crate::commands::{EvalArgs, Levels, LlmArgs};
use crate::config::{ProviderKind, RunConfig};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "natpred",
    version,
    about = "Nationality prediction from personal names"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Svm,
    Fasttext,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Svm => "svm",
            Self::Fasttext => "fasttext",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    All,
    Nationality,
    Region,
    Continent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Project,
    Native,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, cap and split the raw corpus; print a corpus summary.
    Prepare,
    /// Train a model on the prepared split and print dev accuracy.
    Train {
        #[arg(long, value_enum, default_value = "svm")]
        model: ModelKind,
    },
    /// Write top-k predictions for a split as JSON Lines.
    Predict {
        #[arg(long, value_enum, default_value = "svm")]
        model: ModelKind,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Vocabulary file to use instead of the one saved with the model.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Run a prompting strategy over a split.
    Llm {
        /// zero_shot, few_shot, chain_of_thought, self_consistency, least_to_most or self_reflection.
        #[arg(long)]
        strategy: Option<String>,
        /// mock or http.
        #[arg(long)]
        provider: Option<String>,
        /// Mock script (JSON).
        #[arg(long)]
        script: Option<PathBuf>,
        /// nationality, region or continent.
        #[arg(long)]
        granularity: Option<String>,
        /// Only the first N names of the split.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Score prediction dumps into a report bundle.
    Eval {
        /// Prediction dump (repeatable).
        #[arg(long = "dump", required = true)]
        dumps: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        granularity: LevelArg,
        /// `project` maps nationality output upward; `native` scores labels as given.
        #[arg(long, value_enum, default_value = "project")]
        mode: ModeArg,
        /// Add Head/Mid/Tail frequency strata from the manifest.
        #[arg(long)]
        strata: bool,
        /// Bucket the two dumps' outcomes name by name.
        #[arg(long)]
        compare: bool,
    },
    /// Render tables and plot data from one or more bundles.
    Report {
        /// Bundle file (repeatable); defaults to `<out>/eval/report.json`.
        #[arg(long = "bundle")]
        bundles: Vec<PathBuf>,
    },
}

/// Loads the config, applies the global overrides and runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    match cli.command {
        Command::Prepare => commands::prepare(&config),
        Command::Train { model } => commands::train(&config, model),
        Command::Predict {
            model,
            k,
            split,
            vocab,
        } => commands::predict(&config, model, k, split, vocab.as_deref()),
        Command::Llm {
            strategy,
            provider,
            script,
            granularity,
            limit,
            split,
        } => {
            let strategy: StrategyKind = strategy
                .as_deref()
                .unwrap_or(&config.llm.strategy)
                .parse()
                .map_err(CliError::Config)?;
            let provider = match provider {
                Some(p) => p.parse::<ProviderKind>().map_err(CliError::Config)?,
                None => config.llm.provider,
            };
            let granularity: Granularity = granularity
                .as_deref()
                .unwrap_or(&config.llm.granularity)
                .parse()
                .map_err(CliError::Config)?;
            let args = LlmArgs {
                strategy,
                provider,
                script: script.or_else(|| config.llm.script.clone()),
                granularity,
                limit: limit.or(config.llm.limit),
                split,
            };
            commands::llm(&config, &args)
        }
        Command::Eval {
            dumps,
            granularity,
            mode,
            strata,
            compare,
        } => {
            let levels = match granularity {
                LevelArg::All => Levels::All,
                LevelArg::Nationality => Levels::One(Granularity::Nationality),
                LevelArg::Region => Levels::One(Granularity::Region),
                LevelArg::Continent => Levels::One(Granularity::Continent),
            };
            let mode = match mode {
                ModeArg::Project => LabelMode::Project,
                ModeArg::Native => LabelMode::Native,
            };
            commands::eval(
                &config,
                &EvalArgs {
                    dumps,
                    levels,
                    mode,
                    strata,
                    compare,
                },
            )
        }
        Command::Report { bundles } => commands::report(&config, &bundles),
    }
}
