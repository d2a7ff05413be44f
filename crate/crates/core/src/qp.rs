//! Dense operator-splitting (ADMM) solver for convex quadratic programs
//!
//! ```text
//! minimize    1/2 x'Px + q'x
//! subject to  l <= Ax <= u
//! ```
//!
//! The iteration follows the OSQP scheme: modified Ruiz equilibration, a
//! cached Cholesky factor of `P + sigma I + A' diag(rho) A`, over-relaxation,
//! adaptive step size and a final active-set polish that recovers an exact
//! KKT point whenever the guessed active set is correct.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho_interval: usize,
    pub polish: bool,
    /// Keep per-iteration residuals in the solution (for diagnostics).
    pub record_history: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho_interval: 25,
            polish: true,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Iteration cap reached; the best iterate is returned.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Largest constraint violation of `x`.
    pub primal_residual: f64,
    /// `||Px + q + A'y||_inf`.
    pub dual_residual: f64,
    pub polished: bool,
    pub history: Vec<(f64, f64)>,
}

impl QpSolution {
    pub fn converged(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// Inequality-constrained QP in OSQP form.
#[derive(Debug, Clone)]
pub struct DenseQp<'a> {
    pub p: &'a DMatrix<f64>,
    pub q: &'a DVector<f64>,
    pub a: &'a DMatrix<f64>,
    pub l: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Constraint violation of `ax` against the box `[l, u]`.
pub fn box_violation(ax: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> f64 {
    ax.iter()
        .zip(l.iter().zip(u.iter()))
        .fold(0.0_f64, |acc, (&v, (&lo, &hi))| acc.max(lo - v).max(v - hi))
}

pub fn objective(p: &DMatrix<f64>, q: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(p * x)) + q.dot(x)
}

struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

fn ruiz(p: &mut DMatrix<f64>, q: &mut DVector<f64>, a: &mut DMatrix<f64>, iters: usize) -> Scaling {
    let (n, mrows) = (p.nrows(), a.nrows());
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(mrows, 1.0);
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dd = DVector::zeros(n);
        for j in 0..n {
            let pc = p.column(j).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let ac = a.column(j).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            dd[j] = 1.0 / clamp(pc.max(ac)).sqrt();
        }
        let mut de = DVector::zeros(mrows);
        for i in 0..mrows {
            let ar = a.row(i).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            de[i] = 1.0 / clamp(ar).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..mrows {
                a[(i, j)] *= de[i] * dd[j];
            }
        }
        q.component_mul_assign(&dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);
    }
    let mean_col = if n > 0 {
        (0..n)
            .map(|j| p.column(j).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .sum::<f64>()
            / n as f64
    } else {
        1.0
    };
    let cost = 1.0 / clamp(mean_col.max(inf_norm(q)));
    *p *= cost;
    *q *= cost;
    Scaling { d, e, cost }
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = p.nrows();
    let mut k = p.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    let ra = DMatrix::from_fn(a.nrows(), n, |i, j| a[(i, j)] * rho[i]);
    k += a.transpose() * ra;
    Cholesky::new(k).ok_or_else(|| Error::DegenerateData("QP KKT matrix is not positive definite".into()))
}

fn rho_vector(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    DVector::from_fn(l.len(), |i, _| {
        if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
            RHO_MIN
        } else if (u[i] - l[i]).abs() < 1e-12 {
            RHO_EQ_SCALE * rho
        } else {
            rho
        }
    })
}

/// Solves the QP. `warm` supplies a starting primal/dual pair.
pub fn solve_dense_qp(
    prob: &DenseQp<'_>,
    settings: &QpSettings,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<QpSolution> {
    let n = prob.p.nrows();
    let mrows = prob.a.nrows();
    if prob.p.ncols() != n || prob.q.len() != n || (mrows > 0 && prob.a.ncols() != n) {
        return Err(Error::Dimension("QP operand shapes disagree".into()));
    }
    if prob.l.len() != mrows || prob.u.len() != mrows {
        return Err(Error::Dimension("QP bound lengths disagree with A".into()));
    }
    for i in 0..mrows {
        if prob.l[i] > prob.u[i] {
            return Err(Error::Infeasible(format!(
                "row {i}: lower bound {} exceeds upper bound {}",
                prob.l[i], prob.u[i]
            )));
        }
    }
    if prob.p.iter().chain(prob.q.iter()).chain(prob.a.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("QP data"));
    }

    if mrows == 0 {
        let chol = Cholesky::new(prob.p.clone())
            .ok_or_else(|| Error::DegenerateData("QP Hessian is not positive definite".into()))?;
        let x = chol.solve(&(-prob.q));
        let dual_residual = inf_norm(&(prob.p * &x + prob.q));
        return Ok(QpSolution {
            objective: objective(prob.p, prob.q, &x),
            x,
            y: DVector::zeros(0),
            status: QpStatus::Solved,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual,
            polished: false,
            history: Vec::new(),
        });
    }

    let mut p = prob.p.clone();
    let mut q = prob.q.clone();
    let mut a = prob.a.clone();
    let sc = ruiz(&mut p, &mut q, &mut a, settings.scaling_iters);
    let l = prob.l.component_mul(&sc.e);
    let u = prob.u.component_mul(&sc.e);
    let d_inv = sc.d.map(|v| 1.0 / v);
    let e_inv = sc.e.map(|v| 1.0 / v);

    let (mut x, mut y) = match warm {
        Some((x0, y0)) if x0.len() == n && y0.len() == mrows => (
            x0.component_mul(&d_inv),
            y0.component_mul(&e_inv) * sc.cost,
        ),
        Some((x0, _)) if x0.len() == n => (x0.component_mul(&d_inv), DVector::zeros(mrows)),
        _ => (DVector::zeros(n), DVector::zeros(mrows)),
    };
    let project = |v: &DVector<f64>| DVector::from_fn(mrows, |i, _| v[i].clamp(l[i], u[i]));
    let mut z = project(&(&a * &x));

    let mut rho_scalar = settings.rho;
    let mut rho = rho_vector(&l, &u, rho_scalar);
    let mut chol = factor(&p, &a, &rho, settings.sigma)?;
    let sigma = settings.sigma;
    let alpha = settings.alpha;

    let mut history = Vec::new();
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;

    for k in 1..=settings.max_iter {
        iterations = k;
        let rhs = &x * sigma - &q + a.transpose() * (rho.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &a * &x_tilde;
        let x_next = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_next = project(&(&z_relaxed + y.component_div(&rho)));
        y += rho.component_mul(&(&z_relaxed - &z_next));
        x = x_next;
        z = z_next;

        // Residuals in the original (unscaled) space.
        let ax = &a * &x;
        let px = &p * &x;
        let aty = a.transpose() * &y;
        let prim = inf_norm(&(&ax - &z).component_mul(&e_inv));
        let dual = inf_norm(&(&px + &q + &aty).component_mul(&d_inv)) / sc.cost;
        let ax_n = inf_norm(&ax.component_mul(&e_inv)).max(inf_norm(&z.component_mul(&e_inv)));
        let dual_n = inf_norm(&px.component_mul(&d_inv))
            .max(inf_norm(&aty.component_mul(&d_inv)))
            .max(inf_norm(&q.component_mul(&d_inv)))
            / sc.cost;
        if settings.record_history {
            history.push((prim, dual));
        }
        let eps_prim = settings.eps_abs + settings.eps_rel * ax_n;
        let eps_dual = settings.eps_abs + settings.eps_rel * dual_n;
        let merit = prim / eps_prim.max(1e-300) + dual / eps_dual.max(1e-300);
        if best.as_ref().is_none_or(|(bm, _, _)| merit < *bm) {
            best = Some((merit, x.clone(), y.clone()));
        }
        if prim <= eps_prim && dual <= eps_dual {
            status = QpStatus::Solved;
            break;
        }

        if settings.adaptive_rho_interval > 0 && k % settings.adaptive_rho_interval == 0 {
            let num = prim / ax_n.max(1e-12);
            let den = dual / dual_n.max(1e-12);
            let ratio = (num / den.max(1e-300)).sqrt();
            let new_rho = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
            if new_rho > 5.0 * rho_scalar || new_rho < rho_scalar / 5.0 {
                rho_scalar = new_rho;
                rho = rho_vector(&l, &u, rho_scalar);
                chol = factor(&p, &a, &rho, sigma)?;
            }
        }
    }

    if status != QpStatus::Solved {
        if let Some((_, bx, by)) = best {
            x = bx;
            y = by;
        }
    }

    // Back to original variables.
    let mut x_out = x.component_mul(&sc.d);
    let mut y_out = y.component_mul(&sc.e) / sc.cost;
    let mut polished = false;
    if settings.polish {
        if let Some((xp, yp)) = polish(prob, &x_out, &y_out, settings.eps_abs) {
            x_out = xp;
            y_out = yp;
            polished = true;
            status = QpStatus::Solved;
        }
    }
    let ax = prob.a * &x_out;
    Ok(QpSolution {
        objective: objective(prob.p, prob.q, &x_out),
        primal_residual: box_violation(&ax, prob.l, prob.u),
        dual_residual: inf_norm(&(prob.p * &x_out + prob.q + prob.a.transpose() * &y_out)),
        x: x_out,
        y: y_out,
        status,
        iterations,
        polished,
        history,
    })
}

/// Solves the equality-constrained problem on the active set guessed from
/// the ADMM multipliers. Returns `None` unless the result is a KKT point.
fn polish(
    prob: &DenseQp<'_>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = x.len();
    let ax = prob.a * x;
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..prob.a.nrows() {
        let (lo, hi) = (prob.l[i], prob.u[i]);
        if lo.is_finite() && (ax[i] - lo < -y[i] || (hi - lo).abs() < 1e-12) {
            active.push((i, lo));
        } else if hi.is_finite() && hi - ax[i] < y[i] {
            active.push((i, hi));
        }
    }
    let k = active.len();
    if k > n {
        return None;
    }
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(prob.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-prob.q));
    for (r, &(i, b)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = prob.a[(i, j)];
            kkt[(j, n + r)] = prob.a[(i, j)];
        }
        rhs[n + r] = b;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // One step of iterative refinement.
    let resid = &rhs - &kkt * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(prob.a.nrows());
    let scale = 1.0 + inf_norm(prob.q).max(inf_norm(&(prob.p * &xp)));
    for (r, &(i, b)) in active.iter().enumerate() {
        let nu = sol[n + r];
        let is_lower = b == prob.l[i] && (prob.u[i] - prob.l[i]).abs() >= 1e-12;
        let is_upper = b == prob.u[i] && (prob.u[i] - prob.l[i]).abs() >= 1e-12;
        // Sign convention: y < 0 on an active lower bound, y > 0 on an upper.
        if (is_lower && nu > tol * scale) || (is_upper && nu < -tol * scale) {
            return None;
        }
        yp[i] = nu;
    }
    let viol = box_violation(&(prob.a * &xp), prob.l, prob.u);
    if viol > tol {
        return None;
    }
    Some((xp, yp))
}
