//! `tweedie-blind`: synthesize data, train a learned score, and run blind
//! noise estimation and denoising experiments.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tweedie_blind::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "tweedie-blind", version, about = "Blind Tweedie denoising experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate clean/noisy image pairs and a manifest.
    Synth(Common),
    /// Train the learned score network on the manifest's noisy images.
    Train(Common),
    /// Estimate noise family and level for every image.
    Estimate(Common),
    /// Blindly denoise every image.
    Denoise(Common),
    /// Tabulate PSNR for noisy, blind, known-level and exact posterior means.
    Eval(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> tweedie_blind::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::EstimationFailure(_) => 3,
        Error::TrainingDivergence { .. } => 4,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&ExperimentConfig) -> tweedie_blind::Result<()>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::Train(c) => (c, commands::train),
        Command::Estimate(c) => (c, commands::estimate),
        Command::Denoise(c) => (c, commands::denoise),
        Command::Eval(c) => (c, commands::eval),
    };
    match common.load().and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
