use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::{gaussian_noise, Plant};
use crate::error::{Error, Result};
use crate::linalg::{pinv, RANK_RTOL};

/// Parameters of the cable-arm surrogate. Angles are in degrees, times in
/// seconds, loads in kilograms.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub segments: usize,
    pub load: f64,
    /// Cubic softening coefficient (per deg^2).
    pub gamma: f64,
    pub deadband_base: f64,
    pub deadband_per_kg: f64,
    pub lag_base: f64,
    pub lag_per_kg: f64,
    /// Cross-segment cable coupling relative to the direct mapping.
    pub coupling: f64,
    pub max_velocity: f64,
    pub noise_std: f64,
    pub dt: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            segments: 3,
            load: 0.0,
            gamma: 1e-6,
            deadband_base: 0.2,
            deadband_per_kg: 0.3,
            lag_base: 0.15,
            lag_per_kg: 0.1,
            coupling: 0.1,
            max_velocity: 60.0,
            noise_std: 0.05,
            dt: 0.02,
        }
    }
}

impl SurrogateConfig {
    pub const MAX_LOAD: f64 = 2.5;

    pub fn deadband(&self) -> f64 {
        self.deadband_base + self.deadband_per_kg * self.load
    }

    pub fn lag(&self) -> f64 {
        self.lag_base + self.lag_per_kg * self.load
    }

    pub fn motors(&self) -> usize {
        3 * self.segments
    }

    pub fn joints(&self) -> usize {
        2 * self.segments
    }

    /// Motor-to-joint coupling matrix (`2n x 3n`).
    ///
    /// Each joint pair is driven by its own three motors spaced 120 degrees
    /// apart; cables of proximal motors also bend distal joints by
    /// `coupling` times the direct gain.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let n = self.segments;
        let direct = DMatrix::from_fn(2, 3, |r, k| {
            let phi = (k as f64) * 2.0 * std::f64::consts::PI / 3.0;
            let trig = if r == 0 { phi.cos() } else { phi.sin() };
            2.0 / 3.0 * trig
        });
        let mut w = DMatrix::zeros(2 * n, 3 * n);
        for seg in 0..n {
            for src in 0..=seg {
                let gain = if src == seg { 1.0 } else { self.coupling };
                w.view_mut((2 * seg, 3 * src), (2, 3))
                    .copy_from(&(&direct * gain));
            }
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Config("surrogate needs at least one segment".into()));
        }
        if !(0.0..=Self::MAX_LOAD).contains(&self.load) {
            return Err(Error::Config(format!(
                "load {} kg outside [0, {}]",
                self.load,
                Self::MAX_LOAD
            )));
        }
        if self.deadband() < 0.0 || self.lag() <= 0.0 || self.dt <= 0.0 || self.noise_std < 0.0 {
            return Err(Error::Config("surrogate parameters out of range".into()));
        }
        if self.dt > self.lag() {
            return Err(Error::Config("dt must not exceed the lag time constant".into()));
        }
        Ok(())
    }
}

/// Play (backlash) operator: `z` follows `input` only once it leaves the
/// band `[z - width, z + width]`, and then sits on the band edge.
pub fn backlash(z: f64, input: f64, width: f64) -> f64 {
    if input - z > width {
        input - width
    } else if z - input > width {
        input + width
    } else {
        z
    }
}

/// Nonlinear stand-in for a cable-driven arm: integrating motors, coupled
/// cable mapping with cubic softening, load-dependent backlash and a
/// first-order joint lag.
#[derive(Debug, Clone)]
pub struct CableArmSurrogate {
    cfg: SurrogateConfig,
    w: DMatrix<f64>,
    theta: DVector<f64>,
    beta: DVector<f64>,
    z: DVector<f64>,
}

impl CableArmSurrogate {
    pub fn new(cfg: SurrogateConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.coupling_matrix();
        Ok(Self {
            theta: DVector::zeros(cfg.motors()),
            beta: DVector::zeros(cfg.joints()),
            z: DVector::zeros(cfg.joints()),
            w,
            cfg,
        })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.cfg
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W^+`, the joint-to-motor map used by the PID baseline.
    pub fn coupling_pinv(&self) -> DMatrix<f64> {
        pinv(&self.w, RANK_RTOL).expect("coupling matrix is finite")
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn hysteresis_state(&self) -> &DVector<f64> {
        &self.z
    }

    /// Noise-free static joint target for motor angles `theta`.
    pub fn static_map(&self, theta: &DVector<f64>) -> DVector<f64> {
        let wt = &self.w * theta;
        wt.map(|v| v - self.cfg.gamma * v * v * v)
    }

    pub fn surrogate_step(
        &mut self,
        omega: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        if omega.len() != self.cfg.motors() {
            return Err(Error::Dimension(format!(
                "expected {} motor velocities, got {}",
                self.cfg.motors(),
                omega.len()
            )));
        }
        let vmax = self.cfg.max_velocity;
        for (channel, &v) in omega.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("motor velocity"));
            }
            if v.abs() > vmax {
                return Err(Error::InputBounds {
                    channel,
                    value: v,
                    min: -vmax,
                    max: vmax,
                });
            }
        }
        let dt = self.cfg.dt;
        self.theta.axpy(dt, omega, 1.0);
        let target = self.static_map(&self.theta);
        let width = self.cfg.deadband();
        for (zi, ti) in self.z.iter_mut().zip(target.iter()) {
            *zi = backlash(*zi, *ti, width);
        }
        let alpha = dt / self.cfg.lag();
        self.beta += (&self.z - &self.beta) * alpha;
        Ok(&self.beta + gaussian_noise(self.cfg.joints(), self.cfg.noise_std, rng))
    }
}

impl Plant for CableArmSurrogate {
    fn input_dim(&self) -> usize {
        self.cfg.motors()
    }

    fn output_dim(&self) -> usize {
        self.cfg.joints()
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn label(&self) -> String {
        format!("load={}", self.cfg.load)
    }

    fn step(&mut self, u: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.surrogate_step(u, rng)
    }
}
