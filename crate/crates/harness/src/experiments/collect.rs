use std::path::Path;

use anyhow::Result;
use ddmpc::trajectory::{is_persistently_exciting, min_data_length, SystemDims};

use super::{closed_loop_data, sub_seed};
use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;

/// Records one excitation episode at the configured load to `data.csv`.
pub fn collect(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let traj = closed_loop_data(cfg, sub_seed(seed, 1))?;
    traj.save(out.join("data.csv"))?;
    let (n_ini, l) = (cfg.planner.n_ini, cfg.planner.l);
    let bound = min_data_length(SystemDims::new(cfg.plant.motors(), cfg.plant.joints(), cfg.plant.order)?, n_ini, l);
    let depth = n_ini + l;
    let pe = traj.len() >= depth && is_persistently_exciting(traj.inputs(), depth)?;
    let mut report = MetricsReport::new("collect");
    report.value("samples", traj.len() as f64);
    report.value("min_data_length", bound as f64);
    report.check(
        "data length",
        traj.len() >= bound,
        format!("N = {} vs minimum {bound} (n_ini = {n_ini}, l = {l}, h = {})", traj.len(), cfg.plant.order),
    );
    report.check("persistent excitation", pe, format!("input Hankel of depth {depth} has full row rank: {pe}"));
    Ok(report)
}
