use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use ddmpc::dsa::DatasetBank;
use ddmpc::mlp::MlpModel;
use ddmpc::plants::held_excitation;
use ddmpc::trajectory::{min_data_length, record_episode, SystemDims, Trajectory};

use super::sub_seed;
use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;
use crate::sim;

/// One recording per configured load. Every entry replays the same motor
/// program, so entries differ only through the plant's response.
pub fn bank_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(String, Trajectory, Option<MlpModel>)>> {
    let p = &cfg.plant;
    let d = &cfg.data;
    let u = held_excitation(
        cfg.dsa.length,
        p.motors(),
        d.amplitude,
        (d.hold_min, d.hold_max),
        d.reversion,
        p.max_velocity,
        p.dt,
        sub_seed(seed, 30),
    );
    cfg.dsa
        .loads
        .iter()
        .enumerate()
        .map(|(i, &load)| {
            let mut plant = sim::surrogate(p, load)?;
            let label = format!("{load}kg");
            let t = record_episode(&mut plant, &u, sub_seed(seed, 31 + i as u64))?;
            let t = Trajectory::new(t.inputs().clone(), t.outputs().clone(), t.dt(), label.clone())?;
            Ok((label, t, None))
        })
        .collect()
}

/// Records the bank and writes `manifest.csv` plus one CSV per entry.
pub fn build_bank(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let datasets = bank_datasets(cfg, seed)?;
    let mut manifest = String::from("# label,trajectory\n");
    for (i, (label, traj, _)) in datasets.iter().enumerate() {
        let file = format!("entry_{i}.csv");
        traj.save(out.join(&file))?;
        writeln!(manifest, "{label},{file}")?;
    }
    std::fs::write(out.join("manifest.csv"), manifest)?;
    let (n_ini, l) = (cfg.planner.n_ini, cfg.planner.l);
    let bound = min_data_length(SystemDims::new(cfg.plant.motors(), cfg.plant.joints(), cfg.plant.order)?, n_ini, l);
    let mut report = MetricsReport::new("build-bank");
    report.value("entries", datasets.len() as f64);
    report.value("entry_length", cfg.dsa.length as f64);
    report.value("min_data_length", bound as f64);
    report.check(
        "entry length",
        cfg.dsa.length >= bound,
        format!("N = {} per entry vs minimum {bound}", cfg.dsa.length),
    );
    let bank = DatasetBank::from_manifest(out.join("manifest.csv"), n_ini, l, cfg.plant.order)?;
    let pe = bank.entries().iter().all(|e| e.partition.persistently_exciting);
    report.check("persistent excitation", pe, format!("all {} entries full row rank at depth {}", bank.len(), n_ini + l));
    Ok(report)
}
