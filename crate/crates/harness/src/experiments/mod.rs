//! One function per CLI subcommand. Each writes its artefacts into `out`
//! and returns the metrics with the run's pass/fail checks.

mod bank;
mod collect;
mod dsa_eval;
mod letters;
mod mlp;
mod repeat;
mod sweep;
mod track;

pub use bank::{build_bank, bank_datasets};
pub use collect::collect;
pub use dsa_eval::{dsa_eval, planning_step_times, PlanningTimes};
pub use letters::letters;
pub use mlp::{motor_angle_data, train_mlp, train_models, TrainedModels};
pub use repeat::repeat;
pub use sweep::{sweep, SweepRow};
pub use track::track;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use ddmpc::trajectory::Trajectory;

use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;
use crate::sim;

/// Derives an independent stream seed for a sub-task.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(tag)
}

pub(crate) fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// The closed-loop data set: the configured file, or a fresh recording at
/// the plant's load.
pub(crate) fn closed_loop_data(cfg: &ExperimentConfig, seed: u64) -> Result<Trajectory> {
    match &cfg.data.file {
        Some(path) => Ok(Trajectory::load(path).with_context(|| format!("loading {}", path.display()))?),
        None => sim::collect(&cfg.plant, &cfg.data, cfg.plant.load, cfg.data.length, seed),
    }
}

pub(crate) fn write_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{header}")?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Runs the named subcommand.
pub fn run(name: &str, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    prepare_out(cfg, out)?;
    let report = match name {
        "collect" => collect(cfg, seed, out)?,
        "train-mlp" => train_mlp(cfg, seed, out)?,
        "build-bank" => build_bank(cfg, seed, out)?,
        "dsa-eval" => dsa_eval(cfg, seed, out)?,
        "sweep" => sweep(cfg, seed, out)?,
        "track" => track(cfg, seed, out)?,
        "repeat" => repeat(cfg, seed, out)?,
        "letters" => letters(cfg, seed, out)?,
        other => anyhow::bail!("unknown experiment {other}"),
    };
    report.write(out)?;
    Ok(report)
}
