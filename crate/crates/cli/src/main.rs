//! `ada-gan`: command-line driver for the augmentation pipeline.
//!
//! Exit status is 0 on success, 1 for invalid configuration or input and 2
//! for failures while running. Errors are reported on stderr as a single
//! line starting with `E_CONFIG`, `E_FORMAT` or `E_TRAIN`.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use adagan::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ada-gan", version, about = "GAN-driven, confidence-gated data augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides ADA_GAN_SEED and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train every configured candidate classifier and keep the best.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        /// Overrides candidates.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train one GAN per class and write checkpoints and sample grids.
    TrainGan {
        #[command(flatten)]
        common: Common,
        /// Overrides gan.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Train only this class.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Generate, perturb and gate samples from trained GANs.
    Augment {
        #[command(flatten)]
        common: Common,
        /// Classifier file written by train-baseline.
        #[arg(long)]
        model: PathBuf,
        /// Directory holding gan_cNN.ckpt files written by train-gan.
        #[arg(long)]
        gans: PathBuf,
    },
    /// Run every stage end to end.
    RunPipeline {
        #[command(flatten)]
        common: Common,
        /// Overrides candidates.epochs and external.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report test accuracy of a classifier (a fresh one when --model is absent).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare analytic gradients of every layer and loss with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random draws per case.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Write the configured dataset as IDX files plus a sample grid.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
}

/// A failure with its exit status and stderr tag.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub tag: &'static str,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            tag: "E_CONFIG",
            message: message.into(),
        }
    }

    pub fn train(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            tag: "E_TRAIN",
            message: message.into(),
        }
    }
}

fn loads_input(e: &Error) -> bool {
    matches!(e, Error::Stage { stage, .. } if stage == "data")
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, tag) = match e.root() {
            Error::Config(_) => (1, "E_CONFIG"),
            Error::Format(_) | Error::Input(_) => (1, "E_FORMAT"),
            Error::Io { .. } if loads_input(&e) => (1, "E_FORMAT"),
            _ => (2, "E_TRAIN"),
        };
        Self { code, tag, message }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("E_CONFIG: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}: {}", f.tag, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
