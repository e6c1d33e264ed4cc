use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cotkt_core::dataset::DatasetError;

mod commands;
mod config;
mod rundir;

/// Marks errors caused by flags or configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Chain-of-thought knowledge transfer and confidence calibration toolkit.
#[derive(Parser)]
#[command(name = "cotkt", version)]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true, default_value = "cotkt.json")]
    pub config: PathBuf,
    /// Run directory to create or continue.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config max_concurrency.
    #[arg(long, global = true)]
    pub max_concurrency: Option<usize>,
    /// Recompute outputs and compare them with the run directory without writing.
    #[arg(long, global = true)]
    pub verify: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Ask the teacher for rationales and keep the correct ones.
    Harvest {
        #[arg(long)]
        dataset: Option<String>,
        /// Backend name from the config.
        #[arg(long)]
        teacher: Option<String>,
        /// Seeded subsample size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples_per_item: Option<u32>,
        /// Extra draws for items with no correct rationale.
        #[arg(long)]
        retry_incorrect: Option<u32>,
    },
    /// Serialize correct rationales as training data.
    BuildTrain {
        /// Also emit nested sweep files for these sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Score predictions from files or from a live student model.
    Eval {
        /// Predictions file for one arm.
        #[arg(long = "arm", value_name = "METHOD=PATH")]
        arms: Vec<String>,
        /// Elicit predictions from a configured backend.
        #[arg(long = "live", value_name = "METHOD=BACKEND")]
        live: Vec<String>,
        /// Student model name for the arm labels.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Combine report.json files into a comparison table.
    Report {
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CoT-quantity sweeps.
    Sweep {
        #[command(subcommand)]
        action: SweepCommand,
    },
    /// Build a replay fixture from hand-written replies.
    Fixture {
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        model: String,
        #[arg(long, value_enum)]
        template: TemplateArg,
        /// JSONL of {item_id, sample?, raw_text}.
        #[arg(long)]
        replies: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Subcommand)]
pub enum SweepCommand {
    Plan {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    Attach {
        #[arg(long = "pred", value_name = "SIZE=PATH")]
        preds: Vec<String>,
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "KT")]
        method: String,
        #[arg(long)]
        dataset: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TemplateArg {
    Cot,
    Inference,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|cause| {
        cause.is::<UsageError>()
            || matches!(
                cause.downcast_ref::<DatasetError>(),
                Some(
                    DatasetError::FileMissing(_)
                        | DatasetError::Spec(_)
                        | DatasetError::NTooLarge { .. }
                )
            )
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
