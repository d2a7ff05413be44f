//! Rest-to-rest quintic references and waypoint paths (letter drawing).

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::plants::{forward_kinematics, inverse_kinematics};

/// `q(t) = a0 + a3 t^3 + a4 t^4 + a5 t^5` joining `p0` to `pt` in `t` seconds
/// with zero velocity and acceleration at both ends.
pub fn quintic_coeffs(p0: f64, pt: f64, t: f64) -> Result<[f64; 6]> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidDuration(t));
    }
    let d = pt - p0;
    Ok([
        p0,
        0.0,
        0.0,
        10.0 * d / t.powi(3),
        -15.0 * d / t.powi(4),
        6.0 * d / t.powi(5),
    ])
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    /// The requested time lay outside the segment and was clamped.
    pub clamped: bool,
}

/// One quintic per channel over a common duration.
#[derive(Debug, Clone, PartialEq)]
pub struct QuinticSegment {
    pub coeffs: Vec<[f64; 6]>,
    pub start: DVector<f64>,
    pub end: DVector<f64>,
    pub duration: f64,
}

impl QuinticSegment {
    pub fn new(p0: &DVector<f64>, pt: &DVector<f64>, duration: f64) -> Result<Self> {
        if p0.len() != pt.len() {
            return Err(Error::Dimension("segment endpoints differ in length".into()));
        }
        let coeffs = p0
            .iter()
            .zip(pt.iter())
            .map(|(&a, &b)| quintic_coeffs(a, b, duration))
            .collect::<Result<_>>()?;
        Ok(Self {
            coeffs,
            start: p0.clone(),
            end: pt.clone(),
            duration,
        })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }
}

/// Evaluates the segment at `t`, clamping to `[0, T]`.
///
/// The endpoint itself is returned exactly so consecutive segments join
/// without rounding gaps.
pub fn sample_reference(seg: &QuinticSegment, t: f64) -> RefSample {
    let clamped = !(0.0..=seg.duration).contains(&t);
    let t = t.clamp(0.0, seg.duration);
    let n = seg.dim();
    if t >= seg.duration {
        return RefSample {
            q: seg.end.clone(),
            qd: DVector::zeros(n),
            qdd: DVector::zeros(n),
            clamped,
        };
    }
    let mut q = DVector::zeros(n);
    let mut qd = DVector::zeros(n);
    let mut qdd = DVector::zeros(n);
    for (i, a) in seg.coeffs.iter().enumerate() {
        q[i] = a[0] + t * (a[1] + t * (a[2] + t * (a[3] + t * (a[4] + t * a[5]))));
        qd[i] = a[1] + t * (2.0 * a[2] + t * (3.0 * a[3] + t * (4.0 * a[4] + t * 5.0 * a[5])));
        qdd[i] = 2.0 * a[2] + t * (6.0 * a[3] + t * (12.0 * a[4] + t * 20.0 * a[5]));
    }
    RefSample { q, qd, qdd, clamped }
}

/// Quintic legs through waypoints, at rest at every waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    pub waypoints: Vec<DVector<f64>>,
    pub durations: Vec<f64>,
    pub segments: Vec<QuinticSegment>,
}

impl WaypointPath {
    pub fn new(waypoints: Vec<DVector<f64>>, durations: Vec<f64>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Config("a path needs at least two waypoints".into()));
        }
        if durations.len() + 1 != waypoints.len() {
            return Err(Error::Dimension("need one duration per leg".into()));
        }
        let segments = waypoints
            .windows(2)
            .zip(&durations)
            .map(|(w, &t)| QuinticSegment::new(&w[0], &w[1], t))
            .collect::<Result<_>>()?;
        Ok(Self {
            waypoints,
            durations,
            segments,
        })
    }

    pub fn uniform(waypoints: Vec<DVector<f64>>, leg_time: f64) -> Result<Self> {
        let legs = waypoints.len().saturating_sub(1);
        Self::new(waypoints, vec![leg_time; legs])
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    pub fn sample(&self, t: f64) -> RefSample {
        let total = self.total_duration();
        let clamped = !(0.0..=total).contains(&t);
        let mut local = t.clamp(0.0, total);
        for (i, seg) in self.segments.iter().enumerate() {
            if local <= seg.duration || i + 1 == self.segments.len() {
                let mut s = sample_reference(seg, local);
                s.clamped = clamped;
                return s;
            }
            local -= seg.duration;
        }
        unreachable!("path has at least one segment")
    }

    /// Samples every `dt` from 0 through the end; each leg contributes
    /// `round(T / dt)` steps so waypoints fall on sample instants.
    pub fn discretize(&self, dt: f64) -> Result<DiscretePath> {
        if !(dt > 0.0) {
            return Err(Error::InvalidDuration(dt));
        }
        let dim = self.waypoints[0].len();
        let mut times = vec![0.0];
        let mut q = vec![self.waypoints[0].clone()];
        let mut qd = vec![DVector::zeros(dim)];
        let mut t0 = 0.0;
        for seg in &self.segments {
            let steps = (seg.duration / dt).round().max(1.0) as usize;
            for k in 1..=steps {
                let tau = seg.duration * k as f64 / steps as f64;
                let s = sample_reference(seg, tau);
                times.push(t0 + tau);
                q.push(s.q);
                qd.push(s.qd);
            }
            t0 += seg.duration;
        }
        Ok(DiscretePath {
            times,
            q: rows(&q),
            qd: rows(&qd),
        })
    }
}

fn rows(v: &[DVector<f64>]) -> DMatrix<f64> {
    let cols = v.first().map_or(0, |x| x.len());
    DMatrix::from_fn(v.len(), cols, |r, c| v[r][c])
}

/// A path sampled on a time grid (one row per instant).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub times: Vec<f64>,
    pub q: DMatrix<f64>,
    pub qd: DMatrix<f64>,
}

impl DiscretePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sum of distances between consecutive samples.
    pub fn arc_length(&self) -> f64 {
        (1..self.q.nrows())
            .map(|r| (self.q.row(r) - self.q.row(r - 1)).norm())
            .sum()
    }

    /// CSV with header `t,q_1..q_c,qd_1..qd_c`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let c = self.q.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((1..=c).map(|i| format!("q_{i}")));
        header.extend((1..=c).map(|i| format!("qd_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (r, t) in self.times.iter().enumerate() {
            let mut line = format!("{t}");
            for v in self.q.row(r).iter().chain(self.qd.row(r).iter()) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Arc length of a polyline.
pub fn polyline_length(points: &[Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Letter {
    S,
    M,
    C,
}

impl Letter {
    pub const ALL: [Letter; 3] = [Letter::S, Letter::M, Letter::C];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "S" | "s" => Ok(Letter::S),
            "M" | "m" => Ok(Letter::M),
            "C" | "c" => Ok(Letter::C),
            other => Err(Error::Config(format!("unknown letter '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Letter::S => "S",
            Letter::M => "M",
            Letter::C => "C",
        }
    }

    /// Glyph outline in unit-height coordinates `(horizontal, vertical)`,
    /// centred on the origin.
    pub fn glyph(self) -> Vec<(f64, f64)> {
        match self {
            Letter::S => vec![
                (0.35, 0.40),
                (0.15, 0.50),
                (-0.15, 0.50),
                (-0.35, 0.35),
                (-0.30, 0.10),
                (0.00, 0.00),
                (0.30, -0.10),
                (0.35, -0.35),
                (0.15, -0.50),
                (-0.15, -0.50),
                (-0.35, -0.40),
            ],
            Letter::M => vec![
                (-0.40, -0.50),
                (-0.40, 0.00),
                (-0.40, 0.50),
                (-0.20, 0.15),
                (0.00, -0.20),
                (0.20, 0.15),
                (0.40, 0.50),
                (0.40, 0.00),
                (0.40, -0.50),
            ],
            Letter::C => (0..10)
                .map(|k| {
                    let a = (45.0 + 30.0 * k as f64).to_radians();
                    (0.4 * a.cos(), 0.5 * a.sin())
                })
                .collect(),
        }
    }
}

/// Plane in which letters are drawn. The default is a horizontal board 1 m
/// above the base with letters running along y and rising along x.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterFrame {
    pub origin: Vector3<f64>,
    pub horizontal: Vector3<f64>,
    pub vertical: Vector3<f64>,
}

impl Default for LetterFrame {
    fn default() -> Self {
        Self {
            origin: Vector3::new(200.0, 0.0, 1000.0),
            horizontal: Vector3::new(0.0, 1.0, 0.0),
            vertical: Vector3::new(1.0, 0.0, 0.0),
        }
    }
}

impl LetterFrame {
    /// Letter polyline in operational space (mm), `scale` mm tall.
    pub fn polyline(&self, letter: Letter, scale: f64) -> Vec<Vector3<f64>> {
        letter
            .glyph()
            .into_iter()
            .map(|(h, v)| self.origin + self.horizontal * (h * scale) + self.vertical * (v * scale))
            .collect()
    }
}

/// Operational- and joint-space references for one letter.
#[derive(Debug, Clone)]
pub struct LetterReference {
    pub letter: Letter,
    pub operational: WaypointPath,
    /// Sampled positions (mm), one row per control step.
    pub positions: DiscretePath,
    /// Joint-angle targets (deg) from inverse kinematics.
    pub joints: DMatrix<f64>,
    /// Motor-angle targets from the inverse model.
    pub motors: DMatrix<f64>,
    /// Motor-rate targets `(theta_k - theta_{k-1}) / dt`; the first row is 0.
    pub motor_rates: DMatrix<f64>,
}

/// Builds the reference streams for `letter`.
///
/// Positions come from quintic legs through the letter polyline; every sample
/// is converted to joint angles by inverse kinematics (seeded with the
/// previous solution, pulled towards `posture`) and then to motor angles by
/// the inverse model. A joint target outside `range_sigma` standard
/// deviations of the model's training inputs is rejected.
#[allow(clippy::too_many_arguments)]
pub fn build_letter_path(
    letter: Letter,
    scale: f64,
    leg_time: f64,
    dt: f64,
    frame: &LetterFrame,
    posture: &[f64],
    inverse_model: &MlpModel,
    range_sigma: f64,
) -> Result<LetterReference> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("letter scale must be positive, got {scale}")));
    }
    if inverse_model.in_dim() != posture.len() {
        return Err(Error::Dimension("inverse model input differs from joint count".into()));
    }
    let points = frame.polyline(letter, scale);
    let waypoints = points.iter().map(|p| DVector::from_column_slice(p.as_slice())).collect();
    let operational = WaypointPath::uniform(waypoints, leg_time)?;
    let positions = operational.discretize(dt)?;
    let n = positions.len();
    let mut joints = DMatrix::zeros(n, posture.len());
    let mut motors = DMatrix::zeros(n, inverse_model.out_dim());
    let mut seed = posture.to_vec();
    for r in 0..n {
        let target = Vector3::new(positions.q[(r, 0)], positions.q[(r, 1)], positions.q[(r, 2)]);
        let beta = inverse_kinematics(&target, &seed, posture, 1e-6)?;
        let bv = DVector::from_column_slice(&beta);
        if !inverse_model.within_training_range(&bv, range_sigma) {
            return Err(Error::ReferenceInfeasible(format!(
                "letter {} sample {r}: joint target outside the inverse model's training range",
                letter.name()
            )));
        }
        let theta = inverse_model.infer(&bv);
        joints.row_mut(r).copy_from(&bv.transpose());
        motors.row_mut(r).copy_from(&theta.transpose());
        seed = beta;
    }
    let mut motor_rates = DMatrix::zeros(n, motors.ncols());
    for r in 1..n {
        let d = (motors.row(r) - motors.row(r - 1)) / dt;
        motor_rates.row_mut(r).copy_from(&d);
    }
    Ok(LetterReference {
        letter,
        operational,
        positions,
        joints,
        motors,
        motor_rates,
    })
}

/// Operational-space trace of joint-angle rows.
pub fn fk_trace(joints: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    joints
        .row_iter()
        .map(|r| forward_kinematics(r.transpose().as_slice()))
        .collect()
}
