use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

pub const SEGMENT_LENGTH_MM: f64 = 350.0;

/// End-effector position (mm) of the segmented arm for joint angles in
/// degrees, two per universal joint.
///
/// Segment `i` extends `SEGMENT_LENGTH_MM` along the running z-axis, and
/// joint `i` at its distal end rotates about y by `beta[2i]` then about x by
/// `beta[2i+1]`. With three segments the last joint only orients the tool, so
/// bending the first joint by 90 degrees about y puts the two distal
/// segments on the x-axis: `(700, 0, 350)`.
pub fn forward_kinematics(beta: &[f64]) -> Vector3<f64> {
    assert!(beta.len().is_multiple_of(2), "joint angles come in pairs");
    let mut rot = Matrix3::identity();
    let mut pos = Vector3::zeros();
    let axis = Vector3::new(0.0, 0.0, SEGMENT_LENGTH_MM);
    for pair in beta.chunks(2) {
        pos += rot * axis;
        rot = rot * rot_y(pair[0].to_radians()) * rot_x(pair[1].to_radians());
    }
    pos
}

/// Position Jacobian (mm per degree) by central differences.
pub fn position_jacobian(beta: &[f64]) -> DMatrix<f64> {
    let h = 1e-4;
    let mut jac = DMatrix::zeros(3, beta.len());
    let mut b = beta.to_vec();
    for j in 0..beta.len() {
        b[j] = beta[j] + h;
        let up = forward_kinematics(&b);
        b[j] = beta[j] - h;
        let down = forward_kinematics(&b);
        b[j] = beta[j];
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    jac
}

/// Joint angles reaching `target` (mm), starting from `seed`.
///
/// Damped least squares on the position error; the redundant directions are
/// pulled towards `posture` through the Jacobian null space.
pub fn inverse_kinematics(target: &Vector3<f64>, seed: &[f64], posture: &[f64], tol: f64) -> Result<Vec<f64>> {
    if seed.len() != posture.len() || !seed.len().is_multiple_of(2) {
        return Err(Error::Dimension("seed and posture must be matching joint-pair vectors".into()));
    }
    let n = seed.len();
    let damping = 1e-3;
    let mut beta = DVector::from_column_slice(seed);
    let posture = DVector::from_column_slice(posture);
    // Posture shaping first, then plain Gauss-Newton polishing.
    for iter in 0..400 {
        let pull = if iter < 300 { 0.5 } else { 0.0 };
        let err = target - forward_kinematics(beta.as_slice());
        let jac = position_jacobian(beta.as_slice());
        let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * (damping * damping);
        let Some(chol) = jjt.cholesky() else {
            break;
        };
        let jpinv = jac.transpose() * chol.inverse();
        let null = DMatrix::identity(n, n) - &jpinv * &jac;
        let err_v = DVector::from_column_slice(err.as_slice());
        let step = &jpinv * err_v + null * (&posture - &beta) * pull;
        beta += &step;
        if iter >= 300 && err.norm() <= 1e-3 * tol {
            break;
        }
    }
    let resid = (target - forward_kinematics(beta.as_slice())).norm();
    if !(resid <= tol) {
        return Err(Error::ReferenceInfeasible(format!(
            "no joint solution for ({:.1}, {:.1}, {:.1}) mm (residual {resid:.3e})",
            target.x, target.y, target.z
        )));
    }
    Ok(beta.iter().cloned().collect())
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}
