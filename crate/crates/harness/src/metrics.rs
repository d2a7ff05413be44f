//! Experiment metrics and pass/fail checks.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;

use crate::sim::TimingStats;

/// One acceptance assertion evaluated by an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Mean / standard deviation / 3-sigma of distances to a pose centroid (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepeatRow {
    pub mean: f64,
    pub std: f64,
    pub three_sigma: f64,
}

impl RepeatRow {
    pub fn from_distances(d: &[f64]) -> Self {
        let n = d.len().max(1) as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std,
            three_sigma: 3.0 * std,
        }
    }
}

/// Mean absolute joint error (deg) of both controllers for one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRow {
    pub mpc: f64,
    pub pid: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub experiment: String,
    /// Tracking error `(1/c) sum ||y - y_ter||^2`.
    pub tracking_error: Option<f64>,
    pub solve_ms: Option<TimingStats>,
    pub steps: usize,
    pub converged: usize,
    pub nonconverged: usize,
    pub repeatability: Vec<RepeatRow>,
    pub per_target: Vec<TargetRow>,
    pub values: Vec<(String, f64)>,
    pub checks: Vec<Check>,
}

impl MetricsReport {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            ..Self::default()
        }
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }

    pub fn value(&mut self, name: impl Into<String>, v: f64) {
        self.values.push((name.into(), v));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn add_steps(&mut self, steps: usize, nonconverged: usize) {
        self.steps += steps;
        self.nonconverged += nonconverged;
        self.converged += steps - nonconverged;
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment = {}", self.experiment);
        if let Some(e) = self.tracking_error {
            let _ = writeln!(s, "tracking_error = {e:.6}");
        }
        if self.steps > 0 {
            let _ = writeln!(s, "steps = {}", self.steps);
            let _ = writeln!(s, "converged = {}", self.converged);
            let _ = writeln!(s, "nonconverged = {}", self.nonconverged);
        }
        if let Some(t) = self.solve_ms {
            let _ = writeln!(
                s,
                "solve_ms mean = {:.4} p95 = {:.4} max = {:.4}",
                t.mean, t.p95, t.max
            );
        }
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v:.6}");
        }
        if !self.per_target.is_empty() {
            let _ = writeln!(s, "per_target_error_deg (mpc, pid):");
            for (i, r) in self.per_target.iter().enumerate() {
                let _ = writeln!(s, "  target {} = {:.4}, {:.4}", i + 1, r.mpc, r.pid);
            }
        }
        if !self.repeatability.is_empty() {
            let _ = writeln!(s, "repeatability_mm (mean, std, 3sigma):");
            for (i, r) in self.repeatability.iter().enumerate() {
                let _ = writeln!(s, "  P{} = {:.6}, {:.6}, {:.6}", i + 1, r.mean, r.std, r.three_sigma);
            }
        }
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("metrics.txt"), self.render())?;
        Ok(())
    }
}
