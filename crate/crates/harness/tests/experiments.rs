//! Experiment-level behaviour: ablations, scaling and reproducibility.

use harness::config::ExperimentConfig;
use harness::experiments::{self, sub_seed};
use harness::metrics::MetricsReport;
use harness::sim;

fn value(report: &MetricsReport, key: &str) -> f64 {
    report.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or_else(|| panic!("no value {key}"))
}

#[test]
fn removing_backlash_helps_both_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::default();
    let mut ablated = base.clone();
    ablated.plant.hysteresis = false;
    let with = experiments::run("track", &base, 42, &dir.path().join("with")).unwrap();
    let without = experiments::run("track", &ablated, 42, &dir.path().join("without")).unwrap();
    for key in ["mpc_average_error_deg", "pid_average_error_deg"] {
        let (a, b) = (value(&with, key), value(&without, key));
        assert!(b.is_finite() && b < a, "{key}: {b} without backlash vs {a} with");
    }
    assert_eq!(without.nonconverged, 0);
}

#[test]
fn repeatability_spread_scales_with_sensor_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.repeat.cycles = 10;
    // One identification data set for both runs, so only the closed-loop
    // measurement noise differs.
    let data = sim::collect(&cfg.plant, &cfg.data, cfg.plant.load, cfg.data.length, sub_seed(7, 1)).unwrap();
    let file = dir.path().join("data.csv");
    data.save(&file).unwrap();
    cfg.data.file = Some(file);
    let mut spread = Vec::new();
    for noise in [0.05, 0.1] {
        cfg.plant.noise_std = noise;
        let report = experiments::run("repeat", &cfg, 42, &dir.path().join(format!("n{noise}"))).unwrap();
        spread.push(value(&report, "average_std_mm"));
    }
    let ratio = spread[1] / spread[0];
    assert!((1.6..=2.4).contains(&ratio), "STD {spread:?}, ratio {ratio}");
}

#[test]
fn same_seed_same_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.steps = 100;
    cfg.sweep.repeats = 1;
    for name in ["collect", "sweep", "track"] {
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        experiments::run(name, &cfg, 5, &a).unwrap();
        experiments::run(name, &cfg, 5, &b).unwrap();
        let mut compared = 0;
        for entry in std::fs::read_dir(&a).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "csv") {
                let other = b.join(path.file_name().unwrap());
                assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&other).unwrap(), "{}", path.display());
                compared += 1;
            }
        }
        assert!(compared > 0, "{name} wrote no tables");
    }
}

#[test]
fn different_seeds_different_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    experiments::run("collect", &cfg, 1, &dir.path().join("a")).unwrap();
    experiments::run("collect", &cfg, 2, &dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a/data.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn bank_round_trips_through_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.dsa.loads = vec![0.0, 1.0];
    cfg.dsa.length = 400;
    let report = experiments::run("build-bank", &cfg, 3, dir.path()).unwrap();
    assert!(report.passed(), "{:?}", report.checks);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert!(manifest.contains("0kg") && manifest.contains("1kg"), "{manifest}");
}
