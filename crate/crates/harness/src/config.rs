//! Experiment configuration, read from TOML.
//!
//! Every block has defaults, so an empty file is a valid configuration and a
//! config only needs to list what it changes.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ddmpc::planner::{Bounds, PlannerConfig};
use ddmpc::plants::SurrogateConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub plant: PlantBlock,
    pub planner: PlannerBlock,
    pub data: DataBlock,
    pub dsa: DsaBlock,
    pub refgen: RefgenBlock,
    pub mlp: MlpBlock,
    pub sweep: SweepBlock,
    pub track: TrackBlock,
    pub repeat: RepeatBlock,
    pub letters: LettersBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: None,
            plant: PlantBlock::default(),
            planner: PlannerBlock::default(),
            data: DataBlock::default(),
            dsa: DsaBlock::default(),
            refgen: RefgenBlock::default(),
            mlp: MlpBlock::default(),
            sweep: SweepBlock::default(),
            track: TrackBlock::default(),
            repeat: RepeatBlock::default(),
            letters: LettersBlock::default(),
        }
    }
}

/// Surrogate plant parameters (degrees, seconds, kilograms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantBlock {
    pub segments: usize,
    pub load: f64,
    pub noise_std: f64,
    /// `false` zeroes the backlash band (hysteresis ablation).
    pub hysteresis: bool,
    pub gamma: f64,
    pub deadband_base: f64,
    pub deadband_per_kg: f64,
    pub lag_base: f64,
    pub lag_per_kg: f64,
    pub coupling: f64,
    pub max_velocity: f64,
    pub dt: f64,
    /// Latent order assumed when sizing data sets.
    pub order: usize,
}

impl Default for PlantBlock {
    fn default() -> Self {
        let s = SurrogateConfig::default();
        Self {
            segments: s.segments,
            load: s.load,
            noise_std: s.noise_std,
            hysteresis: true,
            gamma: s.gamma,
            deadband_base: s.deadband_base,
            deadband_per_kg: s.deadband_per_kg,
            lag_base: s.lag_base,
            lag_per_kg: s.lag_per_kg,
            coupling: s.coupling,
            max_velocity: s.max_velocity,
            dt: s.dt,
            order: 15,
        }
    }
}

impl PlantBlock {
    pub fn surrogate(&self, load: f64) -> SurrogateConfig {
        let (base, per_kg) = if self.hysteresis {
            (self.deadband_base, self.deadband_per_kg)
        } else {
            (0.0, 0.0)
        };
        SurrogateConfig {
            segments: self.segments,
            load,
            gamma: self.gamma,
            deadband_base: base,
            deadband_per_kg: per_kg,
            lag_base: self.lag_base,
            lag_per_kg: self.lag_per_kg,
            coupling: self.coupling,
            max_velocity: self.max_velocity,
            noise_std: self.noise_std,
            dt: self.dt,
        }
    }

    pub fn motors(&self) -> usize {
        3 * self.segments
    }

    pub fn joints(&self) -> usize {
        2 * self.segments
    }
}

/// Planner horizons and scalar weights (applied to every channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerBlock {
    pub l: usize,
    pub n_ini: usize,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub f: f64,
    pub p: f64,
    /// Symmetric motor-velocity bound; defaults to the plant limit.
    pub u_max: Option<f64>,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for PlannerBlock {
    fn default() -> Self {
        Self {
            l: 6,
            n_ini: 2,
            q: 10000.0,
            r: 1.0,
            s: 0.01,
            f: 0.01,
            p: 0.1,
            u_max: None,
            solver_tol: 1e-6,
            max_iter: 4000,
        }
    }
}

impl PlannerBlock {
    pub fn planner_config(&self, plant: &PlantBlock) -> PlannerConfig {
        self.planner_config_with(plant, self.l, self.n_ini)
    }

    pub fn planner_config_with(&self, plant: &PlantBlock, l: usize, n_ini: usize) -> PlannerConfig {
        let (m, c) = (plant.motors(), plant.joints());
        PlannerConfig {
            u_bounds: Bounds::symmetric(m, self.u_max.unwrap_or(plant.max_velocity)),
            solver_tol: self.solver_tol,
            max_iter: self.max_iter,
            dt: plant.dt,
            ..PlannerConfig::uniform(m, c, l, n_ini, [self.q, self.r, self.s, self.f, self.p])
        }
    }
}

/// Open-loop data collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataBlock {
    /// Recorded length N.
    pub length: usize,
    pub amplitude: f64,
    pub hold_min: usize,
    pub hold_max: usize,
    pub reversion: f64,
    /// Reuse a recorded trajectory CSV instead of collecting.
    pub file: Option<PathBuf>,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            length: 1500,
            amplitude: 60.0,
            hold_min: 3,
            hold_max: 20,
            reversion: 0.5,
            file: None,
        }
    }
}

/// Dataset bank and selection evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsaBlock {
    /// One bank entry per load (kg); M is the list length.
    pub loads: Vec<f64>,
    /// Per-entry length N.
    pub length: usize,
    pub sigma_weight: f64,
    /// Loads at which sample windows are drawn.
    pub window_loads: Vec<f64>,
    pub trials: usize,
    /// Window noise; defaults to the plant noise.
    pub window_noise: Option<f64>,
    /// Joint-space speed (deg/s) of the probing move.
    pub probe_speed: f64,
    /// Joint-space direction of the probing move (normalised).
    pub probe_direction: Vec<f64>,
    /// Steps before the probe reverses.
    pub probe_lead: usize,
    pub timing_solves: usize,
    /// Repetitions per timed step; the median is kept.
    pub timing_repeats: usize,
    /// Existing bank manifest to evaluate instead of building one.
    pub manifest: Option<PathBuf>,
    pub min_accuracy: f64,
    pub min_speedup: f64,
}

impl Default for DsaBlock {
    fn default() -> Self {
        Self {
            loads: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
            length: 1500,
            sigma_weight: 10.0,
            window_loads: vec![0.032, 1.092, 2.088],
            trials: 100,
            window_noise: None,
            probe_speed: 60.0,
            probe_direction: vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0],
            probe_lead: 14,
            timing_solves: 50,
            timing_repeats: 5,
            manifest: None,
            min_accuracy: 0.95,
            min_speedup: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefgenBlock {
    /// Duration of one quintic move between targets (s).
    pub segment_time: f64,
}

impl Default for RefgenBlock {
    fn default() -> Self {
        Self { segment_time: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpBlock {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Samples recorded for training.
    pub samples: usize,
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Training-range check for inverse-model queries (standard deviations).
    pub range_sigma: f64,
    /// Inverse model to load instead of training one.
    pub inverse_model: Option<PathBuf>,
}

impl Default for MlpBlock {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 128,
            epochs: 100,
            hidden: 256,
            hidden_layers: 3,
            samples: 20000,
            split: [0.8, 0.1, 0.1],
            split_seed: 42,
            range_sigma: 4.0,
            inverse_model: None,
        }
    }
}

/// Hyperparameter sweep over data length and horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    /// Data lengths as multiples of the minimum length at each grid point.
    pub n_factors: Vec<f64>,
    /// Fixed data length for the estimation-horizon study.
    pub n_fixed: usize,
    pub n_ini: Vec<usize>,
    pub l: Vec<usize>,
    /// Closed-loop steps per run (T_a).
    pub steps: usize,
    /// Joint-space goal of the step task.
    pub target: Vec<f64>,
    /// Independent repetitions averaged per grid point.
    pub repeats: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            n_factors: vec![0.5, 1.0, 1.5],
            n_fixed: 401,
            n_ini: vec![2, 4, 8],
            l: vec![4],
            steps: 1200,
            target: vec![8.0, -6.0, 6.0, 4.0, -4.0, 3.0],
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputReference {
    /// Zero input targets.
    None,
    /// Motor rates from the joint-rate reference through the coupling pseudo-inverse.
    Coupling,
    /// Motor rates from differencing the inverse MLP's motor-angle targets.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidBlock {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integrator_limit: f64,
}

impl Default for PidBlock {
    fn default() -> Self {
        Self {
            kp: 50.0,
            ki: 5.0,
            kd: 0.0,
            integrator_limit: 20.0,
        }
    }
}

/// Step-target tracking, data-driven MPC against PID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackBlock {
    pub targets: Vec<Vec<f64>>,
    /// Steps spent on each target, including the quintic move.
    pub steps_per_target: usize,
    pub input_reference: InputReference,
    pub pid: PidBlock,
    pub max_ratio: f64,
}

impl Default for TrackBlock {
    fn default() -> Self {
        Self {
            targets: vec![
                vec![10.0, -5.0, 6.0, 3.0, -4.0, 2.0],
                vec![-6.0, 8.0, -3.0, 6.0, 2.0, -4.0],
                vec![4.0, 4.0, 8.0, -6.0, 5.0, 3.0],
                vec![-10.0, -6.0, 2.0, 4.0, -6.0, 5.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ],
            steps_per_target: 150,
            input_reference: InputReference::Coupling,
            pid: PidBlock::default(),
            max_ratio: 0.8,
        }
    }
}

/// Position repeatability over fixed poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatBlock {
    pub poses: Vec<Vec<f64>>,
    pub cycles: usize,
    pub steps_per_pose: usize,
    /// Bound on the mean distance for noiseless runs (mm).
    pub noiseless_tolerance_mm: f64,
}

impl Default for RepeatBlock {
    fn default() -> Self {
        Self {
            poses: vec![
                vec![12.0, 6.0, 8.0, -4.0, 6.0, 2.0],
                vec![-12.0, 6.0, -8.0, -4.0, -6.0, 2.0],
                vec![6.0, -12.0, 4.0, 8.0, 2.0, -6.0],
                vec![-6.0, -12.0, -4.0, 8.0, -2.0, -6.0],
                vec![0.0, 10.0, 0.0, 10.0, 0.0, 0.0],
            ],
            cycles: 30,
            steps_per_pose: 100,
            noiseless_tolerance_mm: 1e-6,
        }
    }
}

/// Letter drawing in operational space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LettersBlock {
    pub letters: Vec<String>,
    /// Letter height (mm).
    pub scale: f64,
    /// Seconds per polyline leg.
    pub leg_time: f64,
    /// Joint posture the inverse kinematics is pulled towards.
    pub posture: Vec<f64>,
    /// Pass threshold on the mean operational-space deviation (mm).
    pub threshold_mm: f64,
}

impl Default for LettersBlock {
    fn default() -> Self {
        Self {
            letters: vec!["S".into(), "M".into(), "C".into()],
            scale: 100.0,
            leg_time: 1.0,
            posture: vec![10.0, 0.0, 10.0, 0.0, 0.0, 0.0],
            threshold_mm: 5.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing config")?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.file, &mut cfg.dsa.manifest, &mut cfg.mlp.inverse_model]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.plant.joints();
        ensure!(self.plant.segments >= 1, "plant.segments must be >= 1");
        self.plant.surrogate(self.plant.load).validate()?;
        self.planner.planner_config(&self.plant).validate()?;
        for (name, p) in [
            ("data.file", &self.data.file),
            ("dsa.manifest", &self.dsa.manifest),
            ("mlp.inverse_model", &self.mlp.inverse_model),
        ] {
            if let Some(p) = p {
                ensure!(p.exists(), "{name} {} does not exist", p.display());
            }
        }
        ensure!(self.data.length > 0, "data.length must be positive");
        ensure!(self.data.hold_min >= 1 && self.data.hold_max >= self.data.hold_min, "data hold range is empty");
        ensure!(!self.dsa.loads.is_empty(), "dsa.loads is empty");
        ensure!(self.dsa.probe_direction.len() == c, "dsa.probe_direction needs {c} entries");
        ensure!(self.dsa.probe_direction.iter().any(|v| *v != 0.0), "dsa.probe_direction is zero");
        ensure!(self.refgen.segment_time > 0.0, "refgen.segment_time must be positive");
        ensure!(self.sweep.target.len() == c, "sweep.target needs {c} entries");
        for (name, set) in [("track.targets", &self.track.targets), ("repeat.poses", &self.repeat.poses)] {
            ensure!(!set.is_empty(), "{name} is empty");
            if let Some(bad) = set.iter().find(|t| t.len() != c) {
                bail!("{name}: entry {bad:?} needs {c} joint angles");
            }
        }
        ensure!(self.letters.posture.len() == c, "letters.posture needs {c} entries");
        let (a, b, t) = (self.mlp.split[0], self.mlp.split[1], self.mlp.split[2]);
        ensure!(
            a > 0.0 && b > 0.0 && t >= 0.0 && ((a + b + t) - 1.0).abs() < 1e-9,
            "mlp.split must be positive fractions summing to 1"
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_dims() {
        assert!(ExperimentConfig::from_toml("[plant]\nloud = 1.0\n").is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.track.targets[2].pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.data.file = Some(PathBuf::from("/nonexistent/data.csv"));
        assert!(cfg.validate().is_err());
    }
}
