//! `deskbert` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deskbert::Error;

/// Exit status for a successful run.
const EXIT_OK: u8 = 0;
/// Some experiment arm failed, or a run-time error occurred.
const EXIT_FAILURE: u8 = 1;
/// Bad command line or configuration.
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "deskbert", version, about = "Desk-scale transformer transfer learning")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Base random seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a subword vocabulary and merge table from a text corpus.
    TokenizerTrain {
        /// One document per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// `frequency` or `likelihood`.
        #[arg(long)]
        scoring: Option<String>,
    },
    /// Masked-token and next-sentence pretraining.
    Pretrain {
        /// One sentence per line; blank lines separate documents.
        #[arg(long)]
        corpus: PathBuf,
        /// Directory holding vocab.txt and merges.txt.
        #[arg(long)]
        tokenizer: PathBuf,
    },
    /// Fine-tune a classifier on a labeled CSV and score a held-out split.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Pretrained checkpoint; a fresh model is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a bag-of-words or averaged-embedding linear baseline.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        /// `bow` or `embedding`.
        #[arg(long, default_value = "bow")]
        arm: String,
    },
    /// Stratified k-fold grid search for one arm; axes come from `grid.*` config keys.
    Gridsearch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "bow")]
        arm: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Run a manifest over a learning-curve plan (desk-scale unless the manifest sets `plan`).
    Curve { manifest: PathBuf },
    /// Run a manifest and write the JSON report and summary table.
    Report { manifest: PathBuf },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) | Error::Parse { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match commands::run(cli) {
        Ok(failures) if failures > 0 => {
            eprintln!("{failures} arm run(s) failed; see the report");
            ExitCode::from(EXIT_FAILURE)
        }
        Ok(_) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
