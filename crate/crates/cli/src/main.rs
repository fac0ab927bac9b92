mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use casein::Error;
use clap::{Args, Parser, Subcommand};

/// Emotion-intensity controllable spectrogram synthesis: data generation,
/// the three training phases, synthesis and evaluation.
#[derive(Parser, Debug)]
#[command(name = "casein", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by the training phases. Values given here override the
/// `--config` file, which overrides the built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    /// Dataset directory written by `generate-data`.
    #[arg(long, env = "CASEIN_DATA")]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes the synthetic train/val/test splits.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corpus configuration (counts, vocabulary, channels, bands, frequencies).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Trains the emotion manifold autoencoder.
    TrainManifold {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Trains the sliding-window emotion recogniser.
    TrainSwer {
        #[command(flatten)]
        flags: TrainFlags,
        /// Window radius in phonemes on each side.
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Trains the cascade against frozen manifold and recogniser checkpoints.
    TrainCasein {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        manifold: Option<PathBuf>,
        #[arg(long)]
        swer: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        /// `casein` or `explicit-only`.
        #[arg(long, default_value = "casein")]
        variant: String,
    },
    /// Renders a mel spectrogram from phonemes and intensity curves.
    Synthesize {
        /// Cascade checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Space-separated phoneme ids.
        #[arg(long)]
        phonemes: String,
        /// Space-separated frame counts, one per phoneme.
        #[arg(long)]
        durations: String,
        #[arg(long, default_value_t = 0)]
        speaker: usize,
        /// Curve file: one `emotion: position=intensity, ...` line per emotion.
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the per-phoneme emotion distribution of one utterance as CSV.
    PredictD {
        /// Recogniser checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, env = "CASEIN_DATA")]
        data: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restores the test split from recognised distributions and reports MCD and proxies.
    Evaluate {
        /// Cascade checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Recogniser checkpoint the cascade was trained against.
        #[arg(long)]
        swer: Option<PathBuf>,
        #[arg(long, env = "CASEIN_DATA")]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Writes the PCA trace and tangent-angle period of one utterance's codes.
    AnalyzeManifold {
        /// Manifold checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, env = "CASEIN_DATA")]
        data: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs data generation, all three phases, the explicit-only ablation and evaluation.
    Pipeline {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact(_) => 3,
        Error::Config(_) | Error::Format(_) | Error::Io { .. } => 4,
        Error::Divergence(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
