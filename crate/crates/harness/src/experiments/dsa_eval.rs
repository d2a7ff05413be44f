use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use ddmpc::dsa::{format_score_table, hconcat_partitions, select_dataset, DatasetBank, SampleWindow};
use ddmpc::planner::{control_step, ControllerState, PlannerConfig, ReferenceSet};
use ddmpc::plants::Plant;
use ddmpc::predictor::compute_g_matrix;
use ddmpc::trajectory::{record_episode, HankelPartition};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bank_datasets, sub_seed, write_rows};
use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;
use crate::sim::{self, TimingStats};

fn load_bank(cfg: &ExperimentConfig, seed: u64) -> Result<DatasetBank> {
    let (n_ini, l, h) = (cfg.planner.n_ini, cfg.planner.l, cfg.plant.order);
    Ok(match &cfg.dsa.manifest {
        Some(path) => DatasetBank::from_manifest(path, n_ini, l, h).with_context(|| format!("loading {}", path.display()))?,
        None => DatasetBank::new(bank_datasets(cfg, seed)?, n_ini, l, h)?,
    })
}

/// Entry loads recovered from labels such as `1.5kg`.
fn entry_loads(bank: &DatasetBank) -> Result<Vec<f64>> {
    bank.entries()
        .iter()
        .map(|e| {
            e.label
                .trim_end_matches("kg")
                .parse::<f64>()
                .map_err(|_| anyhow!("bank label '{}' is not a load like '1.5kg'", e.label))
        })
        .collect()
}

fn nearest(loads: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, l) in loads.iter().enumerate() {
        if (l - x).abs() < (loads[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Samples one window at `load`: from rest, move along the configured joint
/// direction for `probe_lead` steps, then reverse for `l` steps. The window
/// covers the last `n_ini` forward steps and the reversal.
pub fn probe_window(cfg: &ExperimentConfig, load: f64, noise_seed: u64) -> Result<SampleWindow> {
    let mut pb = cfg.plant.clone();
    if let Some(n) = cfg.dsa.window_noise {
        pb.noise_std = n;
    }
    let mut plant = sim::surrogate(&pb, load)?;
    let dir = DVector::from_vec(cfg.dsa.probe_direction.clone()).normalize();
    let mut v = plant.coupling_pinv() * dir * cfg.dsa.probe_speed;
    let peak = v.amax();
    if peak > pb.max_velocity {
        v *= pb.max_velocity / peak;
    }
    let (n_ini, l) = (cfg.planner.n_ini, cfg.planner.l);
    let lead = cfg.dsa.probe_lead.max(n_ini);
    let u = DMatrix::from_fn(lead + l, plant.input_dim(), |t, j| if t < lead { v[j] } else { -v[j] });
    let traj = record_episode(&mut plant, &u, noise_seed)?;
    Ok(SampleWindow::from_trajectory(&traj, lead - n_ini, n_ini + l)?)
}

/// Median planning times per step (ms) for two data sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanningTimes {
    /// Rebuilding G from the data set plus the warm-started solve.
    pub selected: TimingStats,
    pub pooled: TimingStats,
    /// The warm-started solve alone.
    pub selected_qp: TimingStats,
    pub pooled_qp: TimingStats,
}

impl PlanningTimes {
    pub fn speedup(&self) -> f64 {
        self.pooled.median / self.selected.median
    }

    pub fn qp_speedup(&self) -> f64 {
        self.pooled_qp.median / self.selected_qp.median
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Runs a closed loop on `plant` with the selected data set and, at every
/// step, times the planning step (G from data + warm-started QP) for both
/// data sets on identical controller states. Each timing is the median of
/// `repeats` repetitions.
#[allow(clippy::too_many_arguments)]
pub fn planning_step_times(
    plant: &mut impl Plant,
    selected: &HankelPartition,
    pooled: &HankelPartition,
    cfg: &PlannerConfig,
    target: &DVector<f64>,
    solves: usize,
    repeats: usize,
    seed: u64,
) -> Result<PlanningTimes> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = plant.input_dim();
    let zero = DVector::zeros(m);
    let rest: Vec<DVector<f64>> = (0..cfg.n_ini).map(|_| plant.step(&zero, &mut rng)).collect::<ddmpc::Result<_>>()?;
    let mut state = ControllerState::at_rest(m, &rest)?;
    let mut y = rest.last().cloned().expect("n_ini >= 1");
    let refs = ReferenceSet::constant(cfg.l, m, target);
    let g_sel = compute_g_matrix(selected)?;
    let mut samples = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..solves {
        for (k, part) in [selected, pooled].into_iter().enumerate() {
            let mut total = Vec::with_capacity(repeats);
            let mut qp = Vec::with_capacity(repeats);
            for _ in 0..repeats.max(1) {
                let mut probe = state.clone();
                let start = Instant::now();
                let g = compute_g_matrix(part)?;
                let out = control_step(&mut probe, &y, &g, cfg, &refs)?;
                total.push(start.elapsed().as_secs_f64() * 1e3);
                qp.push(out.stats.solve_time.as_secs_f64() * 1e3);
            }
            samples[k].push(median(&mut total));
            samples[k + 2].push(median(&mut qp));
        }
        let out = control_step(&mut state, &y, &g_sel, cfg, &refs)?;
        let u = out.u.map(|v| v.clamp(-cfg.u_bounds.max[0].abs(), cfg.u_bounds.max[0].abs()));
        y = plant.step(&u, &mut rng)?;
    }
    Ok(PlanningTimes {
        selected: TimingStats::from_samples(&samples[0]),
        pooled: TimingStats::from_samples(&samples[1]),
        selected_qp: TimingStats::from_samples(&samples[2]),
        pooled_qp: TimingStats::from_samples(&samples[3]),
    })
}

/// Scores sample windows against the bank, measures selection accuracy and
/// compares planning time with the selected versus the pooled data.
pub fn dsa_eval(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let bank = load_bank(cfg, seed)?;
    let loads = entry_loads(&bank)?;
    let labels: Vec<String> = bank.entries().iter().map(|e| e.label.clone()).collect();
    let lambda = cfg.dsa.sigma_weight;
    let mut report = MetricsReport::new("dsa-eval");

    // Table of scores, one representative window per condition.
    let mut table = Vec::new();
    let mut selection = Vec::new();
    for (w, &load) in cfg.dsa.window_loads.iter().enumerate() {
        let want = nearest(&loads, load);
        let mut counts = vec![0usize; bank.len()];
        let mut mean_scores = vec![0.0; bank.len()];
        for trial in 0..cfg.dsa.trials {
            let win = probe_window(cfg, load, sub_seed(seed, 1000 * (w as u64 + 1) + trial as u64))?;
            let (pick, scores) = select_dataset(&bank, &win, lambda)?;
            counts[pick] += 1;
            for (acc, s) in mean_scores.iter_mut().zip(&scores) {
                *acc += s / cfg.dsa.trials as f64;
            }
            if trial == 0 {
                table.push((format!("{load}kg"), scores));
            }
        }
        let accuracy = counts[want] as f64 / cfg.dsa.trials.max(1) as f64;
        report.value(format!("accuracy_{load}kg"), accuracy);
        report.check(
            format!("selection at {load}kg"),
            accuracy >= cfg.dsa.min_accuracy,
            format!(
                "nearest entry {} chosen in {}/{} trials (picks per entry {counts:?})",
                labels[want], counts[want], cfg.dsa.trials
            ),
        );
        let mut row = vec![load, loads[want], accuracy];
        row.extend(counts.iter().map(|&c| c as f64));
        row.extend(mean_scores);
        selection.push(row);
    }
    std::fs::write(out.join("scores.csv"), format_score_table(&labels, &table))?;
    let mut header = String::from("window_load,nearest_load,accuracy");
    for l in &labels {
        header.push_str(&format!(",picks_{l}"));
    }
    for l in &labels {
        header.push_str(&format!(",mean_score_{l}"));
    }
    write_rows(&out.join("selection.csv"), &header, selection)?;

    // Planning time: one entry against all entries side by side.
    let probe_load = cfg.dsa.window_loads.get(1).or(cfg.dsa.window_loads.first()).copied().unwrap_or(cfg.plant.load);
    let sel = nearest(&loads, probe_load);
    let parts: Vec<&HankelPartition> = bank.entries().iter().map(|e| &e.partition).collect();
    let pooled = hconcat_partitions(&parts)?;
    let mut plant = sim::surrogate(&cfg.plant, probe_load)?;
    let pc = cfg.planner.planner_config(&cfg.plant);
    let target = DVector::from_vec(cfg.sweep.target.clone());
    let times = planning_step_times(
        &mut plant,
        &bank.entries()[sel].partition,
        &pooled,
        &pc,
        &target,
        cfg.dsa.timing_solves,
        cfg.dsa.timing_repeats,
        sub_seed(seed, 40),
    )?;
    let timing = format!(
        "data,columns,median_ms,p95_ms,qp_median_ms\nselected,{},{:.4},{:.4},{:.4}\npooled,{},{:.4},{:.4},{:.4}\n",
        bank.entries()[sel].partition.width(),
        times.selected.median,
        times.selected.p95,
        times.selected_qp.median,
        pooled.width(),
        times.pooled.median,
        times.pooled.p95,
        times.pooled_qp.median,
    );
    // Wall-clock numbers vary run to run, so they are kept apart from the
    // deterministic tables.
    std::fs::write(out.join("timing.txt"), timing)?;
    report.solve_ms = Some(times.selected);
    report.value("planning_speedup", times.speedup());
    report.value("qp_only_speedup", times.qp_speedup());
    report.check(
        "planning speedup",
        times.speedup() >= cfg.dsa.min_speedup,
        format!(
            "median {:.3} ms pooled vs {:.3} ms selected = {:.2}x over {} steps (QP alone {:.2}x)",
            times.pooled.median,
            times.selected.median,
            times.speedup(),
            cfg.dsa.timing_solves,
            times.qp_speedup()
        ),
    );
    Ok(report)
}
