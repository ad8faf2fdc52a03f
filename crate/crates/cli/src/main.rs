mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lstmkf-bench", version, about = "Generate synthetic trajectories, train filters and compare them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// overrides the config's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write train.dataset and test.dataset
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured model and write its checkpoint and log
    Train {
        #[command(flatten)]
        common: Common,
        /// training dataset [default: <out>/train.dataset]
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run every configured method on the test split
    Eval {
        #[command(flatten)]
        common: Common,
        /// test dataset [default: <out>/test.dataset]
        #[arg(long)]
        data: Option<PathBuf>,
        /// dataset for the baseline grid search [default: <out>/train.dataset]
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// directory holding <model>.checkpoint.json [default: <out>]
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Extract epoch, loss and mean gain from a training log
    GainCurve {
        #[command(flatten)]
        common: Common,
        /// training log [default: <out>/lstm_kf.train_log.csv]
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Per-step noise covariance norms of a trained filter on one sequence
    NoiseTrace {
        #[command(flatten)]
        common: Common,
        /// LSTM-KF checkpoint [default: <out>/lstm_kf.checkpoint.json]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// dataset [default: <out>/test.dataset]
        #[arg(long)]
        data: Option<PathBuf>,
        /// sequence index within the dataset
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => commands::generate(&common),
        Command::Train { common, data } => commands::train(&common, data),
        Command::Eval { common, data, train_data, checkpoints } => {
            commands::eval(&common, data, train_data, checkpoints)
        }
        Command::GainCurve { common, log } => commands::gain_curve(&common, log),
        Command::NoiseTrace { common, checkpoint, data, index } => {
            commands::noise_trace(&common, checkpoint, data, index)
        }
    };
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
