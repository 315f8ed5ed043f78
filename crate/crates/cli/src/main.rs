//! Command-line driver for the living-need pipeline.
//!
//! Exit codes: 0 success, 1 bad input (usage, config, validation), 2 runtime
//! failure (I/O, provider, training divergence).

mod config;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use needcast_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "needcast",
    version,
    about = "Living-need prediction: corpus, graph embeddings, retrieval, \
             prompting, service recall, evaluation, and a serving simulator."
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the run-wide seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the artifacts directory.
    #[arg(long, global = true, value_name = "DIR")]
    artifacts: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpus: catalogs plus chronological record splits.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Behavior-graph embedding training.
    #[command(subcommand)]
    Gnn(GnnCommand),
    /// Show what the two history channels retrieve for one context.
    Retrieve {
        #[arg(long)]
        user: u64,
        /// Half-hour slot index, 0-47.
        #[arg(long)]
        slot: u8,
        #[arg(long)]
        location: u32,
        /// Report path (default reports/retrieve.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict and refine the need for one record of a split.
    Predict {
        /// Which split the record comes from.
        #[arg(long, default_value = "test")]
        split: String,
        /// Record position within the split.
        #[arg(long)]
        index: usize,
        /// Report path (default reports/predict.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Living-needs framework construction and catalog validation.
    #[command(subcommand)]
    Framework(FrameworkCommand),
    /// Need-to-service recall index and its trained adapter.
    #[command(subcommand)]
    Recall(RecallCommand),
    /// Training-pair exports (instruction tuning and recall fine-tuning).
    #[command(subcommand)]
    Pairs(PairsCommand),
    /// End-to-end metrics under ablation flags.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serving cost simulation across batch sizes.
    #[command(subcommand)]
    Servebench(ServebenchCommand),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Generate catalogs and train/val/test record files.
    Generate,
}

#[derive(Subcommand)]
enum GnnCommand {
    /// Train embeddings on the train split and save the table.
    Train,
}

#[derive(Subcommand)]
enum FrameworkCommand {
    /// Check that every framework leaf is fulfillable by the catalog.
    Validate {
        /// Framework text to validate instead of the bundled one.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Construct the framework from the catalog via the provider.
    Build,
}

#[derive(Subcommand)]
enum RecallCommand {
    /// Train the adapter on pipeline queries and build the service index.
    Train,
    /// Rank services for a need description.
    Query {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Report path (default reports/recall_query.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PairsCommand {
    /// Write instruction_pairs.jsonl and recall_pairs.jsonl from the train split.
    Export,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Evaluate the standard ablation grid (or one custom flag set).
    Run {
        /// JSON file with ablation flags; evaluates only that variant.
        #[arg(long)]
        flags: Option<PathBuf>,
        /// Report path (default reports/eval.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ServebenchCommand {
    /// Simulate the workload at each batch size and report latency/QPS.
    Run {
        /// Comma-separated batch sizes (default from config).
        #[arg(long, value_delimiter = ',')]
        batches: Option<Vec<usize>>,
        /// Force the prefix cache on or off, overriding the config.
        #[arg(long)]
        cache: Option<Toggle>,
        /// JSONL workload to replay instead of generating one.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Report path (default reports/servebench.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Usage text for the user either way; only explicit help/version
            // requests count as success.
            let requested = matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if requested {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Bad inputs exit 1; anything that went wrong while executing exits 2.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Config(_) | Error::Parse { .. } => 1,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> needcast_core::Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), cli.seed, cli.artifacts)?;
    match cli.command {
        Command::Corpus(CorpusCommand::Generate) => runs::corpus_generate(&config),
        Command::Gnn(GnnCommand::Train) => runs::gnn_train(&config),
        Command::Retrieve {
            user,
            slot,
            location,
            out,
        } => runs::retrieve_once(&config, user, slot, location, out),
        Command::Predict { split, index, out } => runs::predict_once(&config, &split, index, out),
        Command::Framework(FrameworkCommand::Validate { file }) => {
            runs::framework_validate(&config, file)
        }
        Command::Framework(FrameworkCommand::Build) => runs::framework_build(&config),
        Command::Recall(RecallCommand::Train) => runs::recall_train(&config),
        Command::Recall(RecallCommand::Query { text, k, out }) => {
            runs::recall_query(&config, &text, k, out)
        }
        Command::Pairs(PairsCommand::Export) => runs::pairs_export(&config),
        Command::Eval(EvalCommand::Run { flags, out }) => runs::eval_run(&config, flags, out),
        Command::Servebench(ServebenchCommand::Run {
            batches,
            cache,
            workload,
            out,
        }) => runs::servebench_run(
            &config,
            batches,
            cache.map(|t| matches!(t, Toggle::On)),
            workload,
            out,
        ),
    }
}
