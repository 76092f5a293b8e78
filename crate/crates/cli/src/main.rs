//! `rfsr`: simulate paired RF data, train the spectral model, run inference,
//! evaluate and render B-mode images.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rfsr::rfsim::Band;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "rfsr", version, about = "Spectral super-resolution of pulse-echo RF lines")]
struct Cli {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; relative configured paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Single-threaded, seeded execution (bit-reproducible runs).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BandArg {
    Low,
    High,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the paired narrow-/wide-band dataset.
    Simulate,
    /// Train a model on the dataset's training split.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict wide-band lines for every pair of a dataset.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare prediction and input against truth.
    Evaluate {
        /// Dataset whose high band is the reference.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Inference output; its high band is the prediction.
        #[arg(long)]
        prediction: Option<PathBuf>,
        /// Dataset whose low band is the input; defaults to the truth file.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write B-mode images of a dataset.
    Render {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "high")]
        band: BandArg,
        /// Only this phantom; otherwise every phantom of the evaluation split.
        #[arg(long)]
        phantom: Option<u32>,
    },
}

fn run(cli: &Cli) -> rfsr::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => commands::simulate(&cfg, out).map(drop),
        Command::Train { dataset, resume } => {
            commands::train_cmd(&cfg, out, dataset.as_deref(), resume.as_deref(), cli.deterministic)
        }
        Command::Infer { checkpoint, dataset } => commands::infer(&cfg, out, checkpoint.as_deref(), dataset.as_deref()).map(drop),
        Command::Evaluate { truth, prediction, input } => {
            commands::evaluate_cmd(&cfg, out, truth.as_deref(), prediction.as_deref(), input.as_deref()).map(drop)
        }
        Command::Render { dataset, band, phantom } => {
            let band = match band {
                BandArg::Low => Band::Low,
                BandArg::High => Band::High,
            };
            commands::render(&cfg, out, dataset.as_deref(), band, *phantom).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
