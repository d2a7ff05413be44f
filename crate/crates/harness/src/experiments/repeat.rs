use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use ddmpc::plants::forward_kinematics;
use nalgebra::{DVector, Vector3};

use super::{closed_loop_data, sub_seed, write_rows};
use crate::config::ExperimentConfig;
use crate::metrics::{MetricsReport, RepeatRow};
use crate::sim::{self, JointReference, TimingStats};

/// Cycles through the configured poses and measures how tightly the arm
/// returns to each one. One unrecorded warm-up cycle comes first so every
/// recorded visit approaches its pose from the same predecessor.
pub fn repeat(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let pc = cfg.planner.planner_config(&cfg.plant);
    let data = closed_loop_data(cfg, sub_seed(seed, 1))?;
    let g = sim::g_matrix(&data, pc.n_ini, pc.l)?;
    let poses: Vec<DVector<f64>> = cfg.repeat.poses.iter().map(|p| DVector::from_vec(p.clone())).collect();
    let cycles = cfg.repeat.cycles;
    let sequence: Vec<DVector<f64>> = (0..=cycles).flat_map(|_| poses.iter().cloned()).collect();
    let start = DVector::zeros(cfg.plant.joints());
    let reference = JointReference::steps(&start, &sequence, cfg.repeat.steps_per_pose, cfg.refgen.segment_time, cfg.plant.dt)?;
    let mut plant = sim::surrogate(&cfg.plant, cfg.plant.load)?;
    let u_ref = sim::coupling_rates(&plant, &reference);
    let log = sim::run_mpc(&mut plant, &g, &pc, &reference, Some(&u_ref), sub_seed(seed, 80))?;

    // Settled position at the end of every dwell, sampled before the next
    // move enters the prediction horizon; the warm-up cycle is skipped.
    let mut positions: Vec<Vec<Vector3<f64>>> = vec![Vec::with_capacity(cycles); poses.len()];
    let mut rows = Vec::new();
    for (visit, seg) in reference.segments.iter().enumerate().skip(poses.len()) {
        let k = seg.end.saturating_sub(pc.l + 1).max(seg.start);
        let p = forward_kinematics(log.joints.row(k).transpose().as_slice());
        let (cycle, pose) = (visit / poses.len() - 1, visit % poses.len());
        positions[pose].push(p);
        rows.push(vec![cycle as f64 + 1.0, pose as f64 + 1.0, p.x, p.y, p.z]);
    }
    write_rows(&out.join("positions.csv"), "cycle,pose,x_mm,y_mm,z_mm", rows)?;

    let mut report = MetricsReport::new("repeat");
    for pts in &positions {
        let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len().max(1) as f64;
        let d: Vec<f64> = pts.iter().map(|p| (p - centroid).norm()).collect();
        report.repeatability.push(RepeatRow::from_distances(&d));
    }
    let n = report.repeatability.len() as f64;
    let avg = RepeatRow {
        mean: report.repeatability.iter().map(|r| r.mean).sum::<f64>() / n,
        std: report.repeatability.iter().map(|r| r.std).sum::<f64>() / n,
        three_sigma: report.repeatability.iter().map(|r| r.three_sigma).sum::<f64>() / n,
    };
    let mut table = String::from("pose,mean_mm,std_mm,three_sigma_mm\n");
    for (i, r) in report.repeatability.iter().enumerate() {
        writeln!(table, "P{},{:.9},{:.9},{:.9}", i + 1, r.mean, r.std, r.three_sigma)?;
    }
    writeln!(table, "Average,{:.9},{:.9},{:.9}", avg.mean, avg.std, avg.three_sigma)?;
    std::fs::write(out.join("repeatability.csv"), table)?;

    report.solve_ms = Some(TimingStats::from_samples(&log.solve_ms));
    report.add_steps(reference.len(), log.nonconverged);
    report.value("average_mean_mm", avg.mean);
    report.value("average_std_mm", avg.std);
    report.value("average_three_sigma_mm", avg.three_sigma);
    let complete = report.repeatability.iter().all(|r| r.mean.is_finite() && r.std.is_finite() && r.mean >= 0.0)
        && positions.iter().all(|p| p.len() == cycles);
    report.check(
        "report complete",
        complete,
        format!("{} poses x {cycles} cycles plus Average row", poses.len()),
    );
    if cfg.plant.noise_std == 0.0 {
        report.check(
            "noiseless repeatability",
            avg.mean <= cfg.repeat.noiseless_tolerance_mm,
            format!("mean distance {:.3e} mm (limit {:.0e})", avg.mean, cfg.repeat.noiseless_tolerance_mm),
        );
    }
    Ok(report)
}
