use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use harness::config::ExperimentConfig;
use harness::experiments;

#[derive(Parser)]
#[command(name = "ddmpc", version, about = "Data-driven predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random stream in the run (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Record an open-loop excitation data set.
    Collect(Common),
    /// Train the forward and inverse reference models.
    TrainMlp(Common),
    /// Record one data set per load and write a bank manifest.
    BuildBank(Common),
    /// Score windows against the bank, selection accuracy and timing.
    DsaEval(Common),
    /// Tracking error over data length and horizons.
    Sweep(Common),
    /// Step-target tracking against the PID baseline.
    Track(Common),
    /// Position repeatability over fixed poses.
    Repeat(Common),
    /// Draw letters in operational space.
    Letters(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Collect(c) => ("collect", c),
            Command::TrainMlp(c) => ("train-mlp", c),
            Command::BuildBank(c) => ("build-bank", c),
            Command::DsaEval(c) => ("dsa-eval", c),
            Command::Sweep(c) => ("sweep", c),
            Command::Track(c) => ("track", c),
            Command::Repeat(c) => ("repeat", c),
            Command::Letters(c) => ("letters", c),
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (name, common) = cli.command.split();
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(name));
    let report = experiments::run(name, &cfg, cfg.seed, &out)?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    println!("results in {}", out.display());
    Ok(report.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
