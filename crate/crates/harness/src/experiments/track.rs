use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use ddmpc::mlp::MlpModel;
use ddmpc::plants::PidState;
use nalgebra::{DMatrix, DVector};

use super::mlp::inverse_model;
use super::{closed_loop_data, numbered, sub_seed, write_rows};
use crate::config::{ExperimentConfig, InputReference};
use crate::metrics::{MetricsReport, TargetRow};
use crate::sim::{self, JointReference, TimingStats};

/// Motor-rate targets from differencing inverse-model motor angles.
pub(crate) fn mlp_rates(model: &MlpModel, joints: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let motors = model.infer_batch(joints);
    let mut rates = DMatrix::zeros(motors.nrows(), motors.ncols());
    for r in 1..motors.nrows() {
        let d = (motors.row(r) - motors.row(r - 1)) / dt;
        rates.row_mut(r).copy_from(&d);
    }
    rates
}

/// Step-target tracking with data-driven MPC and the PID baseline on
/// identically seeded plants.
pub fn track(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let pc = cfg.planner.planner_config(&cfg.plant);
    let data = closed_loop_data(cfg, sub_seed(seed, 1))?;
    let g = sim::g_matrix(&data, pc.n_ini, pc.l)?;
    let targets: Vec<DVector<f64>> = cfg.track.targets.iter().map(|t| DVector::from_vec(t.clone())).collect();
    let start = DVector::zeros(cfg.plant.joints());
    let reference = JointReference::steps(&start, &targets, cfg.track.steps_per_target, cfg.refgen.segment_time, cfg.plant.dt)?;

    let mut plant = sim::surrogate(&cfg.plant, cfg.plant.load)?;
    let u_ref = match cfg.track.input_reference {
        InputReference::None => None,
        InputReference::Coupling => Some(sim::coupling_rates(&plant, &reference)),
        InputReference::Mlp => Some(mlp_rates(&inverse_model(cfg, seed)?, &reference.q, cfg.plant.dt)),
    };
    let noise_seed = sub_seed(seed, 70);
    let mpc = sim::run_mpc(&mut plant, &g, &pc, &reference, u_ref.as_ref(), noise_seed)?;

    let mut plant = sim::surrogate(&cfg.plant, cfg.plant.load)?;
    let p = &cfg.track.pid;
    let mut pid = PidState::uniform(p.kp, p.ki, p.kd, p.integrator_limit, plant.coupling_pinv())?
        .with_output_limit(cfg.plant.max_velocity);
    let pid_log = sim::run_pid(&mut plant, &mut pid, &reference, noise_seed)?;

    let mut report = MetricsReport::new("track");
    let mut table = String::from("target,mpc_error_deg,pid_error_deg\n");
    for (i, seg) in reference.segments.iter().enumerate() {
        let row = TargetRow {
            mpc: mpc.mean_abs_error(&reference.q, seg.clone()),
            pid: pid_log.mean_abs_error(&reference.q, seg.clone()),
        };
        writeln!(table, "{},{:.6},{:.6}", i + 1, row.mpc, row.pid)?;
        report.per_target.push(row);
    }
    let n = report.per_target.len().max(1) as f64;
    let mpc_avg = report.per_target.iter().map(|r| r.mpc).sum::<f64>() / n;
    let pid_avg = report.per_target.iter().map(|r| r.pid).sum::<f64>() / n;
    writeln!(table, "average,{mpc_avg:.6},{pid_avg:.6}")?;
    std::fs::write(out.join("tracking.csv"), table)?;

    let c = cfg.plant.joints();
    let mut header = vec!["step".to_string()];
    header.extend(numbered("ref_", c));
    header.extend(numbered("mpc_", c));
    header.extend(numbered("pid_", c));
    write_rows(
        &out.join("trace.csv"),
        &header.join(","),
        (0..reference.len()).map(|k| {
            let mut row = vec![k as f64];
            row.extend(reference.q.row(k).iter());
            row.extend(mpc.outputs.row(k).iter());
            row.extend(pid_log.outputs.row(k).iter());
            row
        }),
    )?;

    report.tracking_error = Some(mpc.reference_error(&reference.q));
    report.solve_ms = Some(TimingStats::from_samples(&mpc.solve_ms));
    report.add_steps(reference.len(), mpc.nonconverged);
    report.value("mpc_average_error_deg", mpc_avg);
    report.value("pid_average_error_deg", pid_avg);
    report.value("mpc_clipped_steps", mpc.clipped as f64);
    report.value("pid_clipped_steps", pid_log.clipped as f64);
    let ratio = mpc_avg / pid_avg;
    report.value("error_ratio", ratio);
    report.check(
        "MPC beats PID",
        mpc_avg < pid_avg && ratio < cfg.track.max_ratio,
        format!("average error {mpc_avg:.4} deg vs {pid_avg:.4} deg (ratio {ratio:.3}, limit {})", cfg.track.max_ratio),
    );
    Ok(report)
}
