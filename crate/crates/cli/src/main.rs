//! `geognn`: featurize molecules, pretrain, finetune, evaluate and embed.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;
mod failure;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::TrainFlags;
use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "geognn", version, about = "Geometry-enhanced molecular representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Molecule files (.sdf or .jsonl).
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter precision: f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    /// Abort on the first unreadable record instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads for per-molecule parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and featurize molecules; write encoded graphs and a summary.
    Featurize {
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pretraining on geometry tasks.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Comma-separated subset of length,angle,distance,fingerprint.
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        mask_ratio: Option<f64>,
        /// Resume from this pretraining checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a downstream head (and the body) on labelled molecules.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Start from this pretrained checkpoint instead of random weights.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated label columns; default all labels in train.
        #[arg(long)]
        labels: Option<String>,
        /// rmse, mae or rocauc.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Score a finetuned checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        metric: Option<String>,
        /// train, valid, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write graph embeddings h_G as JSONL.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate a synthetic corpus with geometry-derived labels.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output file; .sdf or .jsonl.
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Fingerprint bits per molecule (at most 8).
        #[arg(long, default_value_t = 0)]
        fingerprint_bits: usize,
        /// Fraction of molecules tagged valid.
        #[arg(long, default_value_t = 0.0)]
        valid_frac: f64,
        /// Fraction of molecules tagged test.
        #[arg(long, default_value_t = 0.0)]
        test_frac: f64,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Featurize { common }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Embed { common, .. }
            | Command::Synth { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.command.common().clone();
    let settings = config::Settings::resolve(&common)?;
    if let Some(n) = config::Settings::threads(&common, &settings.file) {
        if n == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Featurize { .. } => commands::featurize(&common, &settings),
        Command::Pretrain {
            train,
            tasks,
            mask_ratio,
            checkpoint,
            ..
        } => commands::pretrain(&common, &settings, train, tasks.as_deref(), *mask_ratio, checkpoint.as_deref()),
        Command::Finetune {
            train,
            checkpoint,
            labels,
            metric,
            ..
        } => commands::finetune(
            &common,
            &settings,
            train,
            checkpoint.as_deref(),
            labels.as_deref(),
            metric.as_deref(),
        ),
        Command::Evaluate {
            checkpoint,
            metric,
            split,
            ..
        } => commands::evaluate(&common, &settings, checkpoint, metric.as_deref(), split),
        Command::Embed { checkpoint, .. } => commands::embed(&common, &settings, checkpoint),
        Command::Synth {
            file,
            count,
            fingerprint_bits,
            valid_frac,
            test_frac,
            ..
        } => commands::synth(&settings, file, *count, *fingerprint_bits, *valid_frac, *test_frac),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
