//! Simulated plants and the PID baseline.

mod kinematics;
mod lti;
mod pid;
mod surrogate;

pub use kinematics::{forward_kinematics, inverse_kinematics, position_jacobian, SEGMENT_LENGTH_MM};
pub use lti::LtiPlant;
pub use pid::PidState;
pub use surrogate::{backlash, CableArmSurrogate, SurrogateConfig};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// A discrete-time plant driven one sample at a time.
///
/// `step` applies one input vector and returns the output measured for that
/// sample, so `(u_t, step(u_t))` is one row of a recorded trajectory.
pub trait Plant {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn label(&self) -> String;
    fn step(&mut self, u: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>>;
}

/// Draws one zero-mean Gaussian noise vector, or zeros when `std == 0`.
pub(crate) fn gaussian_noise(len: usize, std: f64, rng: &mut dyn RngCore) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    if std == 0.0 {
        return DVector::zeros(len);
    }
    DVector::from_fn(len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Open-loop excitation for integrating actuators: white velocity commands
/// with a pull `-reversion * theta` on the integrated angle so the motors
/// wander around zero instead of drifting. Rows are time steps; every entry
/// is clamped to `±max_velocity`.
pub fn mean_reverting_excitation(
    steps: usize,
    channels: usize,
    velocity_std: f64,
    reversion: f64,
    max_velocity: f64,
    dt: f64,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = DVector::<f64>::zeros(channels);
    let mut out = DMatrix::zeros(steps, channels);
    for t in 0..steps {
        let xi = gaussian_noise(channels, velocity_std, &mut rng);
        for j in 0..channels {
            let w = (xi[j] - reversion * theta[j]).clamp(-max_velocity, max_velocity);
            out[(t, j)] = w;
            theta[j] += dt * w;
        }
    }
    out
}

/// Piecewise-constant excitation: each channel holds a uniform random
/// velocity in `±amplitude` (pulled by `-reversion * theta`) for a random
/// number of steps in `hold`, then redraws. Slower and larger than
/// [`mean_reverting_excitation`], which suits plants with backlash.
#[allow(clippy::too_many_arguments)]
pub fn held_excitation(
    steps: usize,
    channels: usize,
    amplitude: f64,
    hold: (usize, usize),
    reversion: f64,
    max_velocity: f64,
    dt: f64,
    seed: u64,
) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (hold.0.max(1), hold.1.max(hold.0.max(1)));
    let mut theta = DVector::<f64>::zeros(channels);
    let mut current = DVector::<f64>::zeros(channels);
    let mut out = DMatrix::zeros(steps, channels);
    let mut left = 0;
    for t in 0..steps {
        if left == 0 {
            left = rng.random_range(lo..=hi);
            current = DVector::from_fn(channels, |j, _| {
                rng.random_range(-amplitude..=amplitude) - reversion * theta[j]
            });
        }
        left -= 1;
        for j in 0..channels {
            let w = current[j].clamp(-max_velocity, max_velocity);
            out[(t, j)] = w;
            theta[j] += dt * w;
        }
    }
    out
}
