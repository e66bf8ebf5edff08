//! `segan`: synthetic data generation, style-transfer pre-training,
//! adversarial self-ensembling training in any ablation mode, evaluation,
//! discriminator bounds and plot-data export.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 I/O
//! error.

mod commands;
mod output;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::CliError;

#[derive(Parser, Debug)]
#[command(name = "segan", version, about = "Self-ensembling GAN domain adaptation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON config; omitted keys keep their defaults, unknown keys are errors.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must be empty or absent unless --force is given.
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a populated output directory, replacing files of the same name.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the two-domain synthetic benchmark.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the style-transfer generator against a frozen segmenter.
    TrainTgstn {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint holding the frozen segmenter; trained source-only when absent.
        #[arg(long)]
        phi: Option<PathBuf>,
    },
    /// Train in one ablation mode.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// noadapt | at | at-se | at-se-aug | full | full-mst
        #[arg(long)]
        mode: String,
        /// Style generator checkpoint from train-tgstn.
        #[arg(long, conflicts_with = "oracle_style")]
        tgstn: Option<PathBuf>,
        /// Use the dataset's own target appearance as the style transform.
        #[arg(long)]
        oracle_style: bool,
    },
    /// Score a checkpoint on the labelled target images.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated test scales, e.g. 0.75,1,1.25.
        #[arg(long, value_delimiter = ',')]
        mst: Option<Vec<f64>>,
        /// student | teacher; defaults to the model the checkpoint names.
        #[arg(long)]
        model: Option<String>,
        /// Comma-separated class subset for mIoU*.
        #[arg(long, value_delimiter = ',')]
        subset: Option<Vec<usize>>,
        /// report.json of a baseline for per-class gains.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Covering-number and generalization bounds of a trained discriminator.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reference matrices: zero | init.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        phi: Option<f64>,
        /// Target images in the input batch; 0 means all.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Collect run directories into stability, ablation and gain CSVs.
    ExportPlots {
        #[command(flatten)]
        common: Common,
        /// Run directories written by `train`.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Run directory of the baseline for gains; defaults to the noadapt run.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::GenData { common } => commands::gen_data(&common, &argv),
        Command::TrainTgstn { common, data, phi } => commands::train_tgstn(&common, &argv, &data, phi.as_deref()),
        Command::Train {
            common,
            data,
            mode,
            tgstn,
            oracle_style,
        } => commands::train(&common, &argv, &data, &mode, tgstn.as_deref(), oracle_style),
        Command::Eval {
            common,
            checkpoint,
            data,
            mst,
            model,
            subset,
            baseline,
        } => commands::eval(
            &common,
            &argv,
            &checkpoint,
            &data,
            commands::EvalFlags {
                mst,
                model,
                subset,
                baseline,
            },
        ),
        Command::Bounds {
            common,
            checkpoint,
            data,
            policy,
            epsilon,
            delta,
            phi,
            samples,
        } => commands::bounds(
            &common,
            &argv,
            &checkpoint,
            &data,
            commands::BoundFlags {
                policy,
                epsilon,
                delta,
                phi,
                samples,
            },
        ),
        Command::ExportPlots { common, runs, baseline } => plots::export(&common, &argv, &runs, baseline.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
