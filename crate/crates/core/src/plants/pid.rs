use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Per-joint PID acting in joint space, mapped to motor commands through a
/// fixed joint-to-motor matrix (typically the pseudo-inverse of the cable
/// coupling).
#[derive(Debug, Clone)]
pub struct PidState {
    pub kp: DVector<f64>,
    pub ki: DVector<f64>,
    pub kd: DVector<f64>,
    pub integrator: DVector<f64>,
    pub prev_error: DVector<f64>,
    /// Anti-windup clamp on each integrator channel.
    pub integrator_limit: DVector<f64>,
    pub output_map: DMatrix<f64>,
    /// Symmetric saturation applied to each motor command.
    pub output_limit: f64,
}

impl PidState {
    pub fn new(
        kp: DVector<f64>,
        ki: DVector<f64>,
        kd: DVector<f64>,
        integrator_limit: DVector<f64>,
        output_map: DMatrix<f64>,
    ) -> Result<Self> {
        let c = kp.len();
        if ki.len() != c || kd.len() != c || integrator_limit.len() != c || output_map.ncols() != c {
            return Err(Error::Dimension("PID gain/map sizes disagree".into()));
        }
        if kp.iter().chain(ki.iter()).chain(kd.iter()).any(|&g| !(g >= 0.0)) {
            return Err(Error::Config("PID gains must be >= 0".into()));
        }
        if integrator_limit.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Config("integrator clamp must be >= 0".into()));
        }
        Ok(Self {
            integrator: DVector::zeros(c),
            prev_error: DVector::zeros(c),
            kp,
            ki,
            kd,
            integrator_limit,
            output_map,
            output_limit: f64::INFINITY,
        })
    }

    /// Uniform gains on every channel.
    pub fn uniform(kp: f64, ki: f64, kd: f64, limit: f64, output_map: DMatrix<f64>) -> Result<Self> {
        let c = output_map.ncols();
        Self::new(
            DVector::from_element(c, kp),
            DVector::from_element(c, ki),
            DVector::from_element(c, kd),
            DVector::from_element(c, limit),
            output_map,
        )
    }

    pub fn with_output_limit(mut self, limit: f64) -> Self {
        self.output_limit = limit;
        self
    }

    pub fn reset(&mut self) {
        self.integrator.fill(0.0);
        self.prev_error.fill(0.0);
    }

    pub fn pid_step(&mut self, y_ref: &DVector<f64>, y_meas: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        let c = self.kp.len();
        if y_ref.len() != c || y_meas.len() != c {
            return Err(Error::Dimension(format!("PID expects {c} outputs")));
        }
        let e = y_ref - y_meas;
        for i in 0..c {
            let lim = self.integrator_limit[i];
            self.integrator[i] = (self.integrator[i] + e[i] * dt).clamp(-lim, lim);
        }
        let de = (&e - &self.prev_error) / dt;
        self.prev_error = e.clone();
        let v = self.kp.component_mul(&e) + self.ki.component_mul(&self.integrator) + self.kd.component_mul(&de);
        let lim = self.output_limit;
        Ok((&self.output_map * v).map(|x| x.clamp(-lim, lim)))
    }
}
