//! Closed-loop simulation shared by the experiments.

use std::ops::Range;

use anyhow::{ensure, Context, Result};
use ddmpc::planner::{control_step, ControllerState, PlannerConfig, ReferenceSet};
use ddmpc::plants::{held_excitation, CableArmSurrogate, PidState, Plant};
use ddmpc::predictor::{compute_g_matrix, GMatrix};
use ddmpc::refgen::{sample_reference, QuinticSegment};
use ddmpc::trajectory::{partition_hankel, record_episode, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataBlock, PlantBlock};

pub fn surrogate(plant: &PlantBlock, load: f64) -> Result<CableArmSurrogate> {
    Ok(CableArmSurrogate::new(plant.surrogate(load))?)
}

/// Records `length` samples of held random motor velocities on a fresh plant.
pub fn collect(plant: &PlantBlock, data: &DataBlock, load: f64, length: usize, seed: u64) -> Result<Trajectory> {
    let mut p = surrogate(plant, load)?;
    let u = held_excitation(
        length,
        plant.motors(),
        data.amplitude,
        (data.hold_min, data.hold_max),
        data.reversion,
        plant.max_velocity,
        plant.dt,
        seed,
    );
    let mut traj = record_episode(&mut p, &u, seed.wrapping_add(1))?;
    traj = Trajectory::new(traj.inputs().clone(), traj.outputs().clone(), traj.dt(), format!("load={load}"))?;
    Ok(traj)
}

pub fn g_matrix(traj: &Trajectory, n_ini: usize, l: usize) -> Result<GMatrix> {
    let part = partition_hankel(traj, n_ini, l).context("building Hankel partition")?;
    Ok(compute_g_matrix(&part)?)
}

/// Joint reference sampled per control step: row `k` is the target for the
/// output measured after the `k`-th input, i.e. at time `(k + 1) dt`.
#[derive(Debug, Clone)]
pub struct JointReference {
    pub q: DMatrix<f64>,
    pub qd: DMatrix<f64>,
    /// Step range belonging to each target.
    pub segments: Vec<Range<usize>>,
    pub targets: Vec<DVector<f64>>,
}

impl JointReference {
    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    /// Quintic move from `start` to each target in turn over `move_time`,
    /// then hold, `steps_per_target` steps per target.
    pub fn steps(
        start: &DVector<f64>,
        targets: &[DVector<f64>],
        steps_per_target: usize,
        move_time: f64,
        dt: f64,
    ) -> Result<Self> {
        ensure!(steps_per_target > 0, "steps_per_target must be positive");
        let c = start.len();
        let total = steps_per_target * targets.len();
        let mut q = DMatrix::zeros(total, c);
        let mut qd = DMatrix::zeros(total, c);
        let mut segments = Vec::with_capacity(targets.len());
        let mut from = start.clone();
        for (i, target) in targets.iter().enumerate() {
            let seg = QuinticSegment::new(&from, target, move_time)?;
            let base = i * steps_per_target;
            for k in 0..steps_per_target {
                let s = sample_reference(&seg, (k + 1) as f64 * dt);
                q.row_mut(base + k).copy_from(&s.q.transpose());
                qd.row_mut(base + k).copy_from(&s.qd.transpose());
            }
            segments.push(base..base + steps_per_target);
            from = target.clone();
        }
        Ok(Self {
            q,
            qd,
            segments,
            targets: targets.to_vec(),
        })
    }

    /// A constant target for `steps` steps (a pure step command).
    pub fn hold(target: &DVector<f64>, steps: usize) -> Self {
        let c = target.len();
        Self {
            q: DMatrix::from_fn(steps, c, |_, j| target[j]),
            qd: DMatrix::zeros(steps, c),
            segments: std::iter::once(0..steps).collect(),
            targets: vec![target.clone()],
        }
    }

    /// Horizon targets starting at step `k`, padded with the last row.
    pub fn window(&self, k: usize, l: usize) -> DMatrix<f64> {
        let last = self.len() - 1;
        DMatrix::from_fn(l, self.q.ncols(), |r, j| self.q[((k + r).min(last), j)])
    }
}

/// What one closed-loop run produced.
#[derive(Debug, Clone)]
pub struct LoopLog {
    /// Output measured after each input (one row per step).
    pub outputs: DMatrix<f64>,
    /// Noise-free joint angles after each input.
    pub joints: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    /// Wall-clock solve time per step (ms); empty for PID.
    pub solve_ms: Vec<f64>,
    pub iterations: Vec<usize>,
    pub nonconverged: usize,
    /// Steps whose planned input had to be clipped to the plant limit.
    pub clipped: usize,
}

impl LoopLog {
    fn new(steps: usize, m: usize, c: usize) -> Self {
        Self {
            outputs: DMatrix::zeros(steps, c),
            joints: DMatrix::zeros(steps, c),
            inputs: DMatrix::zeros(steps, m),
            solve_ms: Vec::with_capacity(steps),
            iterations: Vec::with_capacity(steps),
            nonconverged: 0,
            clipped: 0,
        }
    }

    /// `(1/c) sum_k ||y_k - r_k||^2`: the planner's tracking error with the
    /// reference row of each step as its target.
    pub fn reference_error(&self, reference: &DMatrix<f64>) -> f64 {
        (&self.outputs - reference).norm_squared() / reference.ncols() as f64
    }

    /// Mean absolute joint error against `reference` over `rows`.
    pub fn mean_abs_error(&self, reference: &DMatrix<f64>, rows: Range<usize>) -> f64 {
        let c = reference.ncols();
        let n = rows.len() * c;
        let mut acc = 0.0;
        for k in rows {
            for j in 0..c {
                acc += (self.outputs[(k, j)] - reference[(k, j)]).abs();
            }
        }
        acc / n as f64
    }
}

fn clip(u: &mut DVector<f64>, limit: f64) -> bool {
    let mut hit = false;
    for v in u.iter_mut() {
        if v.abs() > limit {
            *v = v.clamp(-limit, limit);
            hit = true;
        }
    }
    hit
}

/// Holds the plant at rest for `n` samples and returns the measurements.
fn rest(plant: &mut CableArmSurrogate, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    let zero = DVector::zeros(plant.input_dim());
    (0..n).map(|_| Ok(plant.step(&zero, rng)?)).collect()
}

/// Receding-horizon tracking of `reference` with data-driven MPC.
///
/// `u_ref` holds one motor-rate target per step (or is empty for zero
/// targets). Measurement noise is drawn from `seed`.
pub fn run_mpc(
    plant: &mut CableArmSurrogate,
    g: &GMatrix,
    cfg: &PlannerConfig,
    reference: &JointReference,
    u_ref: Option<&DMatrix<f64>>,
    seed: u64,
) -> Result<LoopLog> {
    let (m, c, l) = (g.m(), g.c(), cfg.l);
    let limit = plant.config().max_velocity;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest_y = rest(plant, g.n_ini(), &mut rng)?;
    let mut state = ControllerState::at_rest(m, &rest_y)?;
    let mut y = rest_y.last().cloned().expect("n_ini >= 1");
    let steps = reference.len();
    let mut log = LoopLog::new(steps, m, c);
    for k in 0..steps {
        let y_tar = reference.window(k, l);
        let u_tar = match u_ref {
            Some(u) => {
                let last = u.nrows() - 1;
                DMatrix::from_fn(l, m, |r, j| u[((k + r).min(last), j)])
            }
            None => DMatrix::zeros(l, m),
        };
        let refs = ReferenceSet {
            y_ter: y_tar.row(l - 1).transpose(),
            u_tar,
            y_tar,
        };
        let out = control_step(&mut state, &y, g, cfg, &refs).with_context(|| format!("planning step {k}"))?;
        let mut u = out.u;
        if clip(&mut u, limit) {
            log.clipped += 1;
        }
        log.solve_ms.push(out.stats.solve_time.as_secs_f64() * 1e3);
        log.iterations.push(out.stats.iterations);
        if !out.stats.converged {
            log.nonconverged += 1;
        }
        y = plant.step(&u, &mut rng)?;
        log.inputs.row_mut(k).copy_from(&u.transpose());
        log.outputs.row_mut(k).copy_from(&y.transpose());
        log.joints.row_mut(k).copy_from(&plant.beta().transpose());
    }
    Ok(log)
}

/// The same task under joint-space PID (no feedforward).
pub fn run_pid(plant: &mut CableArmSurrogate, pid: &mut PidState, reference: &JointReference, seed: u64) -> Result<LoopLog> {
    let (m, c) = (plant.input_dim(), plant.output_dim());
    let dt = plant.dt();
    let limit = plant.config().max_velocity;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = rest(plant, 1, &mut rng)?.pop().expect("one sample");
    let steps = reference.len();
    let mut log = LoopLog::new(steps, m, c);
    for k in 0..steps {
        let target = reference.q.row(k).transpose();
        let mut u = pid.pid_step(&target, &y, dt)?;
        if clip(&mut u, limit) {
            log.clipped += 1;
        }
        y = plant.step(&u, &mut rng)?;
        log.inputs.row_mut(k).copy_from(&u.transpose());
        log.outputs.row_mut(k).copy_from(&y.transpose());
        log.joints.row_mut(k).copy_from(&plant.beta().transpose());
    }
    Ok(log)
}

/// Motor-rate targets `W^+ qd` for a joint-rate reference.
pub fn coupling_rates(plant: &CableArmSurrogate, reference: &JointReference) -> DMatrix<f64> {
    let winv = plant.coupling_pinv();
    (&reference.qd * winv.transpose()).into_owned()
}

/// Solve-time summary (ms).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: pick(0.5),
            p95: pick(0.95),
            max: s[s.len() - 1],
        }
    }
}
