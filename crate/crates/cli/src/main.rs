//! `oatr`: synthetic data, pre-training, evaluation and diagnostics.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use oatr::objects::TagStrategy;
use oatr::trainer::{Ablation, VisualInput};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Failure while running (exit 2).
    Runtime(oatr::Error),
}

impl From<oatr::Error> for CliError {
    fn from(e: oatr::Error) -> Self {
        match e {
            oatr::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "oatr", version, about = "Object-aware video-text pre-training", arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration; explicit flags override its values.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus (train/val/test manifests, vocabularies).
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        captions_per_video: Option<usize>,
    },
    /// Pre-train a dual encoder; resumes if OUT already holds a checkpoint.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Word vocabulary (default: vocab.txt next to the manifest).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Tag vocabulary (default: tags.txt next to the manifest).
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        tag_strategy: Option<TagStrategy>,
        #[arg(long)]
        visual_input: Option<VisualInput>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_min: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        learnable_temperature: bool,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Zero-shot retrieval on a manifest.
    EvalZeroshot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        /// Join each video's captions into one query.
        #[arg(long)]
        multi_sentence: bool,
    },
    /// Retrain only the projection heads on TRAIN and evaluate on TEST.
    LinearProbe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Write the masked anchor frame of one sample as a PPM image.
    DumpMask {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        patch_size: usize,
        #[arg(long, default_value_t = 4)]
        frames: usize,
    },
    /// Write a caption token's first-layer attention over a clip's patches.
    DumpAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        caption: usize,
        #[arg(long, default_value_t = 1)]
        token_index: usize,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full objective on a tiny model.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Coordinates sampled per parameter tensor (0: all).
        #[arg(long, default_value_t = 12)]
        coords: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    oatr::par::init_threads_from_env();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
