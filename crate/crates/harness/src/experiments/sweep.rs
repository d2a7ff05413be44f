use std::path::Path;

use anyhow::Result;
use ddmpc::planner::tracking_error;
use ddmpc::trajectory::{min_data_length, SystemDims};
use nalgebra::DVector;

use super::{sub_seed, write_rows};
use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;
use crate::sim::{self, JointReference};

/// One grid point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `"length"` (N varied) or `"n_ini"` (estimation horizon varied).
    pub study: &'static str,
    pub n: usize,
    pub n_ini: usize,
    pub l: usize,
    pub bound: usize,
    pub below_bound: bool,
    /// Mean tracking error over repeats; `inf` if any run failed.
    pub error: f64,
    pub failures: usize,
}

struct Point {
    study: &'static str,
    n: usize,
    n_ini: usize,
    l: usize,
}

fn run_point(cfg: &ExperimentConfig, p: &Point, seed: u64) -> SweepRow {
    let plant = &cfg.plant;
    let bound = min_data_length(
        SystemDims::new(plant.motors(), plant.joints(), plant.order).expect("validated dims"),
        p.n_ini,
        p.l,
    );
    let target = DVector::from_vec(cfg.sweep.target.clone());
    let reference = JointReference::hold(&target, cfg.sweep.steps);
    let pc = cfg.planner.planner_config_with(plant, p.l, p.n_ini);
    let repeats = cfg.sweep.repeats.max(1);
    let mut total = 0.0;
    let mut failures = 0;
    for rep in 0..repeats as u64 {
        // The same data seed at every grid point: shorter data sets are
        // prefixes of longer ones.
        let run = || -> Result<f64> {
            let traj = sim::collect(plant, &cfg.data, plant.load, p.n, sub_seed(seed, 50 + rep))?;
            let g = sim::g_matrix(&traj, p.n_ini, p.l)?;
            let mut plant = sim::surrogate(plant, plant.load)?;
            let log = sim::run_mpc(&mut plant, &g, &pc, &reference, None, sub_seed(seed, 60 + rep))?;
            Ok(tracking_error(&log.outputs, &target))
        };
        match run() {
            Ok(e) if e.is_finite() => total += e,
            _ => {
                failures += 1;
                total = f64::INFINITY;
            }
        }
    }
    SweepRow {
        study: p.study,
        n: p.n,
        n_ini: p.n_ini,
        l: p.l,
        bound,
        below_bound: p.n < bound,
        error: total / repeats as f64,
        failures,
    }
}

/// Tracking error of the step task over data length and horizons. Grid
/// points run on separate threads; rows come back in grid order.
pub fn sweep(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let s = &cfg.sweep;
    let dims = SystemDims::new(cfg.plant.motors(), cfg.plant.joints(), cfg.plant.order)?;
    let n_ini = cfg.planner.n_ini;
    let mut points = Vec::new();
    for &l in &s.l {
        let bound = min_data_length(dims, n_ini, l);
        for &f in &s.n_factors {
            let n = ((f * bound as f64).ceil() as usize).max(n_ini + l);
            points.push(Point { study: "length", n, n_ini, l });
        }
    }
    let l0 = s.l.first().copied().unwrap_or(cfg.planner.l);
    for &k in &s.n_ini {
        points.push(Point {
            study: "n_ini",
            n: s.n_fixed,
            n_ini: k,
            l: l0,
        });
    }
    let rows: Vec<SweepRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = points.iter().map(|p| scope.spawn(move || run_point(cfg, p, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    write_rows(
        &out.join("sweep.csv"),
        "study,n,n_ini,l,bound,below_bound,error,failures",
        rows.iter().map(|r| {
            vec![
                if r.study == "length" { 0.0 } else { 1.0 },
                r.n as f64,
                r.n_ini as f64,
                r.l as f64,
                r.bound as f64,
                if r.below_bound { 1.0 } else { 0.0 },
                r.error,
                r.failures as f64,
            ]
        }),
    )?;

    let mut report = MetricsReport::new("sweep");
    let reference = min_data_length(SystemDims::new(9, 6, 15)?, 8, 4);
    report.check("minimum length arithmetic", reference == 270, format!("min_data_length(9,6,15,8,4) = {reference}"));
    let flagged = rows.iter().filter(|r| r.below_bound).count();
    report.check(
        "rows below the bound flagged",
        rows.iter().all(|r| r.below_bound == (r.n < r.bound)),
        format!("{flagged} of {} grid points below the minimum length", rows.len()),
    );
    for &l in &s.l {
        let study: Vec<&SweepRow> = rows.iter().filter(|r| r.study == "length" && r.l == l).collect();
        if let (Some(short), Some(long)) = (study.first(), study.last()) {
            if study.len() >= 2 {
                report.value(format!("length_error_ratio_l{l}"), short.error / long.error);
                report.check(
                    format!("longer data improves tracking (l = {l})"),
                    long.error * 5.0 <= short.error,
                    format!("error {:.4} at N = {} vs {:.4} at N = {}", long.error, long.n, short.error, short.n),
                );
            }
        }
    }
    let mut by_n_ini: Vec<&SweepRow> = rows.iter().filter(|r| r.study == "n_ini").collect();
    by_n_ini.sort_by_key(|r| r.n_ini);
    if by_n_ini.len() >= 2 {
        let monotone = by_n_ini.windows(2).all(|w| w[1].error <= w[0].error);
        let trace: Vec<String> = by_n_ini.iter().map(|r| format!("n_ini {} -> {:.4}", r.n_ini, r.error)).collect();
        report.check(
            "error nonincreasing in n_ini",
            monotone,
            format!("N = {}: {}", s.n_fixed, trace.join(", ")),
        );
    }
    report.tracking_error = rows.iter().filter(|r| !r.below_bound).map(|r| r.error).reduce(f64::min);
    Ok(report)
}
