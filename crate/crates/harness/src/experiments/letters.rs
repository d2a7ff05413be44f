use std::path::Path;

use anyhow::Result;
use ddmpc::plants::forward_kinematics;
use ddmpc::refgen::{build_letter_path, fk_trace, sample_reference, Letter, LetterFrame, QuinticSegment};
use ddmpc::Error;
use nalgebra::{DMatrix, DVector};

use super::mlp::inverse_model;
use super::track::mlp_rates;
use super::{closed_loop_data, sub_seed, write_rows};
use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;
use crate::sim::{self, JointReference, TimingStats};

/// Draws each configured letter: operational-space path -> joint targets
/// (inverse kinematics) -> motor-rate targets (inverse model), tracked by
/// data-driven MPC. The arm first moves from rest to the letter's start
/// over two legs' time and settles for one more.
pub fn letters(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let lc = &cfg.letters;
    let dt = cfg.plant.dt;
    let pc = cfg.planner.planner_config(&cfg.plant);
    let data = closed_loop_data(cfg, sub_seed(seed, 1))?;
    let g = sim::g_matrix(&data, pc.n_ini, pc.l)?;
    let model = inverse_model(cfg, seed)?;
    let frame = LetterFrame::default();
    let mut report = MetricsReport::new("letters");
    let mut solve_ms = Vec::new();

    for (li, name) in lc.letters.iter().enumerate() {
        let letter = Letter::parse(name)?;
        let path = match build_letter_path(letter, lc.scale, lc.leg_time, dt, &frame, &lc.posture, &model, cfg.mlp.range_sigma) {
            Ok(p) => p,
            Err(e @ Error::ReferenceInfeasible(_)) => {
                report.check(format!("letter {name}"), false, format!("skipped: {e}"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        // The joint path must reproduce the operational path.
        let fk = fk_trace(&path.joints);
        let fk_err = fk
            .iter()
            .enumerate()
            .map(|(r, p)| (0..3).map(|j| (p[j] - path.positions.q[(r, j)]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);

        let c = cfg.plant.joints();
        let first = path.joints.row(0).transpose();
        let approach_time = 2.0 * lc.leg_time;
        let approach = ((approach_time + lc.leg_time) / dt).round() as usize;
        let seg = QuinticSegment::new(&DVector::zeros(c), &first, approach_time)?;
        let n = path.joints.nrows();
        let total = approach + n - 1;
        let mut q = DMatrix::zeros(total, c);
        for k in 0..approach {
            q.row_mut(k).copy_from(&sample_reference(&seg, (k + 1) as f64 * dt).q.transpose());
        }
        for r in 1..n {
            q.row_mut(approach + r - 1).copy_from(&path.joints.row(r));
        }
        let reference = JointReference {
            qd: DMatrix::zeros(total, c),
            segments: vec![0..approach, approach..total],
            targets: vec![first, path.joints.row(n - 1).transpose()],
            q,
        };
        let u_ref = mlp_rates(&model, &reference.q, dt);
        let mut plant = sim::surrogate(&cfg.plant, cfg.plant.load)?;
        let log = sim::run_mpc(&mut plant, &g, &pc, &reference, Some(&u_ref), sub_seed(seed, 90 + li as u64))?;
        solve_ms.extend_from_slice(&log.solve_ms);
        report.add_steps(total, log.nonconverged);

        // Letter portion: reference sample r (r >= 1) is step approach + r - 1.
        let mut rows = Vec::with_capacity(n);
        let mut dev = 0.0;
        let mut sq = 0.0;
        for r in 0..n {
            let k = if r == 0 { approach - 1 } else { approach + r - 1 };
            let actual = forward_kinematics(log.joints.row(k).transpose().as_slice());
            let want = path.positions.q.row(r);
            let d = ((actual.x - want[0]).powi(2) + (actual.y - want[1]).powi(2) + (actual.z - want[2]).powi(2)).sqrt();
            dev += d;
            sq += (log.outputs.row(k) - path.joints.row(r)).norm_squared() / c as f64;
            rows.push(vec![path.positions.times[r], want[0], want[1], want[2], actual.x, actual.y, actual.z, d]);
        }
        let mean_dev = dev / n as f64;
        write_rows(
            &out.join(format!("letter_{}.csv", letter.name())),
            "t,ref_x,ref_y,ref_z,act_x,act_y,act_z,deviation_mm",
            rows,
        )?;
        report.value(format!("{name}_mean_deviation_mm"), mean_dev);
        report.value(format!("{name}_joint_tracking_error"), sq);
        report.value(format!("{name}_reference_fk_error_mm"), fk_err);
        report.check(
            format!("letter {name}"),
            mean_dev <= lc.threshold_mm && fk_err <= 1e-3,
            format!(
                "mean deviation {mean_dev:.3} mm (limit {} mm), reference FK error {fk_err:.1e} mm",
                lc.threshold_mm
            ),
        );
    }
    report.solve_ms = Some(TimingStats::from_samples(&solve_ms));
    Ok(report)
}
