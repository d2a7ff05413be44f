//! Receding-horizon tracking planner on top of the condensed predictor.
//!
//! Outputs are eliminated through `y = G [u_ini; y_ini; u]`, which leaves a
//! strictly convex QP over the stacked future inputs. Smoothing terms
//! penalise consecutive differences inside the horizon plus the first-step
//! jump from the last applied input and the last measured output; output
//! rate bounds apply to the same transitions.

use std::collections::VecDeque;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{stack_rows, unstack_rows};
use crate::predictor::{GMatrix, InitWindow};
use crate::qp::{solve_dense_qp, DenseQp, QpSettings};

/// Closed interval per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub min: DVector<f64>,
    pub max: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            min: DVector::from_element(dim, f64::NEG_INFINITY),
            max: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            min: DVector::from_element(dim, -limit),
            max: DVector::from_element(dim, limit),
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::Config(format!("{name}: min/max lengths differ")));
        }
        for i in 0..self.min.len() {
            if self.min[i].is_nan() || self.max[i].is_nan() || self.min[i] > self.max[i] {
                return Err(Error::Infeasible(format!(
                    "{name}[{i}]: min {} > max {}",
                    self.min[i], self.max[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub l: usize,
    pub n_ini: usize,
    /// Stage output-tracking weight (diagonal, length c).
    pub q: DVector<f64>,
    /// Stage input-tracking weight (diagonal, length m).
    pub r: DVector<f64>,
    /// Terminal output weight (diagonal, length c).
    pub s: DVector<f64>,
    /// Input-difference weight (diagonal, length m).
    pub f: DVector<f64>,
    /// Output-difference weight (diagonal, length c).
    pub p: DVector<f64>,
    pub u_bounds: Bounds,
    pub y_bounds: Bounds,
    pub dy_bounds: Bounds,
    pub solver_tol: f64,
    pub max_iter: usize,
    pub dt: f64,
}

impl PlannerConfig {
    /// Horizons and weights used on the nine-motor, six-joint arm.
    pub fn arm_defaults(m: usize, c: usize) -> Self {
        Self {
            l: 6,
            n_ini: 2,
            q: DVector::from_element(c, 10000.0),
            r: DVector::from_element(m, 70.0),
            s: DVector::from_element(c, 0.01),
            f: DVector::from_element(m, 0.01),
            p: DVector::from_element(c, 0.1),
            u_bounds: Bounds::unbounded(m),
            y_bounds: Bounds::unbounded(c),
            dy_bounds: Bounds::unbounded(c),
            solver_tol: 1e-6,
            max_iter: 4000,
            dt: 0.02,
        }
    }

    /// Same weight on every channel.
    pub fn uniform(m: usize, c: usize, l: usize, n_ini: usize, weights: [f64; 5]) -> Self {
        let [q, r, s, f, p] = weights;
        Self {
            l,
            n_ini,
            q: DVector::from_element(c, q),
            r: DVector::from_element(m, r),
            s: DVector::from_element(c, s),
            f: DVector::from_element(m, f),
            p: DVector::from_element(c, p),
            ..Self::arm_defaults(m, c)
        }
    }

    pub fn m(&self) -> usize {
        self.r.len()
    }

    pub fn c(&self) -> usize {
        self.q.len()
    }

    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.solver_tol,
            eps_rel: self.solver_tol,
            max_iter: self.max_iter,
            ..QpSettings::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.n_ini == 0 {
            return Err(Error::Config("horizons must be >= 1".into()));
        }
        let (m, c) = (self.m(), self.c());
        if self.f.len() != m || self.s.len() != c || self.p.len() != c {
            return Err(Error::Config("weight lengths disagree".into()));
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r), ("S", &self.s), ("F", &self.f), ("P", &self.p)] {
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("{name} weights must be positive")));
            }
        }
        if self.u_bounds.dim() != m || self.y_bounds.dim() != c || self.dy_bounds.dim() != c {
            return Err(Error::Config("bound lengths disagree with dims".into()));
        }
        self.u_bounds.validate("u_bounds")?;
        self.y_bounds.validate("y_bounds")?;
        self.dy_bounds.validate("dy_bounds")?;
        if !(self.solver_tol > 0.0) || self.max_iter == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("solver_tol, max_iter and dt must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step targets over the horizon plus the terminal target.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub u_tar: DMatrix<f64>,
    pub y_tar: DMatrix<f64>,
    pub y_ter: DVector<f64>,
}

impl ReferenceSet {
    /// Hold a constant output target with zero input targets.
    pub fn constant(l: usize, m: usize, y: &DVector<f64>) -> Self {
        Self {
            u_tar: DMatrix::zeros(l, m),
            y_tar: DMatrix::from_fn(l, y.len(), |_, j| y[j]),
            y_ter: y.clone(),
        }
    }
}

/// The condensed QP `min 1/2 u'Hu + g'u + constant` subject to
/// `lower <= A u <= upper`, with `y = phi u + y_free`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    pub ineq: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub y_free: DVector<f64>,
    pub l: usize,
    pub m: usize,
    pub c: usize,
}

impl QpProblem {
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.gradient.dot(u) + self.constant
    }

    pub fn outputs(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.phi * u + &self.y_free
    }
}

fn repeat_diag(w: &DVector<f64>, times: usize) -> DVector<f64> {
    let d = w.len();
    DVector::from_fn(d * times, |i, _| w[i % d])
}

/// Block difference operator: row block k is `x_k - x_{k-1}` (block 0 keeps `x_0`).
fn difference_operator(blocks: usize, d: usize) -> DMatrix<f64> {
    let n = blocks * d;
    let mut op = DMatrix::identity(n, n);
    for i in d..n {
        op[(i, i - d)] = -1.0;
    }
    op
}

/// Adds `sum || diag(w)^(1/2) (A u - b) ||^2` into `(H, g, constant)` with
/// `H = 2 A'WA`, `g = -2 A'Wb`.
fn add_least_squares(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    constant: &mut f64,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &DVector<f64>,
) {
    let wa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * w[i]);
    *h += a.transpose() * &wa * 2.0;
    *g -= wa.transpose() * b * 2.0;
    *constant += b.iter().zip(w.iter()).map(|(bi, wi)| wi * bi * bi).sum::<f64>();
}

pub fn assemble_qp(g: &GMatrix, cfg: &PlannerConfig, win: &InitWindow, refs: &ReferenceSet) -> Result<QpProblem> {
    cfg.validate()?;
    let (m, c, l) = (g.m(), g.c(), g.l());
    if cfg.m() != m || cfg.c() != c || cfg.l != l || cfg.n_ini != g.n_ini() {
        return Err(Error::Dimension(format!(
            "planner config (m={}, c={}, l={}, n_ini={}) disagrees with G (m={m}, c={c}, l={l}, n_ini={})",
            cfg.m(),
            cfg.c(),
            cfg.l,
            cfg.n_ini,
            g.n_ini()
        )));
    }
    if refs.u_tar.shape() != (l, m) || refs.y_tar.shape() != (l, c) || refs.y_ter.len() != c {
        return Err(Error::Dimension("reference shapes disagree with the horizon".into()));
    }
    if refs.u_tar.iter().chain(refs.y_tar.iter()).chain(refs.y_ter.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("references"));
    }

    let n = m * l;
    let phi = g.input_block();
    let y_free = g.free_response(win)?;
    let u_last: DVector<f64> = win.u_ini.row(win.n_ini() - 1).transpose();
    let y_last: DVector<f64> = win.y_ini.row(win.n_ini() - 1).transpose();

    let mut h = DMatrix::zeros(n, n);
    let mut grad = DVector::zeros(n);
    let mut constant = 0.0;

    // Input tracking.
    add_least_squares(
        &mut h,
        &mut grad,
        &mut constant,
        &DMatrix::identity(n, n),
        &stack_rows(&refs.u_tar),
        &repeat_diag(&cfg.r, l),
    );
    // Output tracking.
    add_least_squares(
        &mut h,
        &mut grad,
        &mut constant,
        &phi,
        &(stack_rows(&refs.y_tar) - &y_free),
        &repeat_diag(&cfg.q, l),
    );
    // Terminal output.
    let last = (l - 1) * c;
    add_least_squares(
        &mut h,
        &mut grad,
        &mut constant,
        &phi.rows(last, c).into_owned(),
        &(&refs.y_ter - y_free.rows(last, c)),
        &cfg.s,
    );
    // Input differences, first block against the last applied input.
    let du = difference_operator(l, m);
    let mut du_offset = DVector::zeros(n);
    du_offset.rows_mut(0, m).copy_from(&u_last);
    add_least_squares(&mut h, &mut grad, &mut constant, &du, &du_offset, &repeat_diag(&cfg.f, l));
    // Output differences, first block against the last measured output:
    // D (phi u + y_free) - [y_last; 0] = (D phi) u - b.
    let dy = difference_operator(l, c);
    let dphi = &dy * &phi;
    let mut y_anchor = DVector::zeros(c * l);
    y_anchor.rows_mut(0, c).copy_from(&y_last);
    let dy_b = &y_anchor - &dy * &y_free;
    add_least_squares(&mut h, &mut grad, &mut constant, &dphi, &dy_b, &repeat_diag(&cfg.p, l));

    // Symmetrise against round-off.
    let h = (&h + h.transpose()) * 0.5;

    // Inequalities; rows with no finite bound are dropped.
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut push = |row: DVector<f64>, a: f64, b: f64| {
        if a.is_finite() || b.is_finite() {
            rows.push(row);
            lo.push(a);
            hi.push(b);
        }
    };
    for k in 0..l {
        for j in 0..m {
            let mut row = DVector::zeros(n);
            row[k * m + j] = 1.0;
            push(row, cfg.u_bounds.min[j], cfg.u_bounds.max[j]);
        }
    }
    for i in 0..c * l {
        let j = i % c;
        push(
            phi.row(i).transpose(),
            cfg.y_bounds.min[j] - y_free[i],
            cfg.y_bounds.max[j] - y_free[i],
        );
    }
    for i in 0..c * l {
        let j = i % c;
        push(
            dphi.row(i).transpose(),
            cfg.dy_bounds.min[j] + dy_b[i],
            cfg.dy_bounds.max[j] + dy_b[i],
        );
    }
    let ineq = if rows.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
    };

    Ok(QpProblem {
        hessian: h,
        gradient: grad,
        constant,
        ineq,
        lower: DVector::from_vec(lo),
        upper: DVector::from_vec(hi),
        phi,
        y_free,
        l,
        m,
        c,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub solve_time: Duration,
    pub converged: bool,
    pub objective: f64,
    pub primal_residual: f64,
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct QpOutcome {
    pub u_opt: DMatrix<f64>,
    pub y_pred: DMatrix<f64>,
    pub stats: SolveStats,
    /// Stacked primal/dual iterate, for warm starting the next step.
    pub x: DVector<f64>,
    pub dual: DVector<f64>,
}

pub fn solve_qp(p: &QpProblem, cfg: &PlannerConfig) -> Result<QpOutcome> {
    solve_qp_warm(p, cfg, None)
}

pub fn solve_qp_warm(
    p: &QpProblem,
    cfg: &PlannerConfig,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<QpOutcome> {
    let start = Instant::now();
    let sol = solve_dense_qp(
        &DenseQp {
            p: &p.hessian,
            q: &p.gradient,
            a: &p.ineq,
            l: &p.lower,
            u: &p.upper,
        },
        &cfg.qp_settings(),
        warm,
    )?;
    let solve_time = start.elapsed();
    let y = p.outputs(&sol.x);
    Ok(QpOutcome {
        u_opt: unstack_rows(&sol.x, p.l, p.m),
        y_pred: unstack_rows(&y, p.l, p.c),
        stats: SolveStats {
            iterations: sol.iterations,
            solve_time,
            converged: sol.converged(),
            objective: sol.objective + p.constant,
            primal_residual: sol.primal_residual,
            polished: sol.polished,
        },
        x: sol.x,
        dual: sol.y,
    })
}

/// Rolling state of one control loop.
#[derive(Debug, Clone)]
pub struct ControllerState {
    u_ini: VecDeque<DVector<f64>>,
    y_ini: VecDeque<DVector<f64>>,
    /// Whether the newest input still lacks its measured output.
    awaiting_output: bool,
    warm_x: Option<DVector<f64>>,
    warm_dual: Option<DVector<f64>>,
    pub step_count: usize,
}

impl ControllerState {
    /// Seeds the buffers from `n_ini` outputs measured while the plant was
    /// held at rest with zero input (oldest first).
    pub fn at_rest(m: usize, rest_outputs: &[DVector<f64>]) -> Result<Self> {
        if rest_outputs.is_empty() {
            return Err(Error::Config("need at least one rest measurement".into()));
        }
        Ok(Self {
            u_ini: rest_outputs.iter().map(|_| DVector::zeros(m)).collect(),
            y_ini: rest_outputs.iter().cloned().collect(),
            awaiting_output: false,
            warm_x: None,
            warm_dual: None,
            step_count: 0,
        })
    }

    pub fn n_ini(&self) -> usize {
        self.u_ini.len()
    }

    pub fn last_applied_u(&self) -> &DVector<f64> {
        self.u_ini.back().expect("buffers are never empty")
    }

    pub fn window(&self) -> InitWindow {
        let n = self.u_ini.len();
        let m = self.u_ini[0].len();
        let c = self.y_ini[0].len();
        InitWindow {
            u_ini: DMatrix::from_fn(n, m, |i, j| self.u_ini[i][j]),
            y_ini: DMatrix::from_fn(n, c, |i, j| self.y_ini[i][j]),
        }
    }

    /// Drops the warm start (e.g. after switching datasets).
    pub fn clear_warm_start(&mut self) {
        self.warm_x = None;
        self.warm_dual = None;
    }

    fn record_measurement(&mut self, y: &DVector<f64>) {
        if self.awaiting_output {
            self.y_ini.pop_front();
            self.y_ini.push_back(y.clone());
            self.awaiting_output = false;
        } else {
            *self.y_ini.back_mut().expect("non-empty") = y.clone();
        }
    }

    fn record_input(&mut self, u: &DVector<f64>) {
        self.u_ini.pop_front();
        self.u_ini.push_back(u.clone());
        self.awaiting_output = true;
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u: DVector<f64>,
    pub y_pred: DMatrix<f64>,
    pub stats: SolveStats,
}

/// One receding-horizon step: record `y_meas`, solve warm-started from the
/// shifted previous plan, apply and remember the first input.
pub fn control_step(
    state: &mut ControllerState,
    y_meas: &DVector<f64>,
    g: &GMatrix,
    cfg: &PlannerConfig,
    refs: &ReferenceSet,
) -> Result<StepOutcome> {
    if y_meas.len() != g.c() {
        return Err(Error::Dimension(format!("expected {} outputs, got {}", g.c(), y_meas.len())));
    }
    if state.n_ini() != g.n_ini() {
        return Err(Error::Dimension("controller buffers disagree with n_ini".into()));
    }
    state.record_measurement(y_meas);
    let problem = assemble_qp(g, cfg, &state.window(), refs)?;
    let warm = match (&state.warm_x, &state.warm_dual) {
        (Some(x), Some(y)) => Some((x, y)),
        _ => None,
    };
    let out = solve_qp_warm(&problem, cfg, warm)?;
    let m = g.m();
    let u: DVector<f64> = out.u_opt.row(0).transpose();
    // Shift the plan one step, repeating the last block.
    let n = out.x.len();
    let mut shifted = DVector::zeros(n);
    shifted.rows_mut(0, n - m).copy_from(&out.x.rows(m, n - m));
    shifted.rows_mut(n - m, m).copy_from(&out.x.rows(n - m, m));
    state.warm_x = Some(shifted);
    state.warm_dual = Some(out.dual.clone());
    state.record_input(&u);
    state.step_count += 1;
    Ok(StepOutcome {
        u,
        y_pred: out.y_pred,
        stats: out.stats,
    })
}

/// `(1/c) sum_t ||y_t - y_ter||^2`.
pub fn tracking_error(outputs: &DMatrix<f64>, y_ter: &DVector<f64>) -> f64 {
    let c = outputs.ncols();
    let mut acc = 0.0;
    for row in outputs.row_iter() {
        acc += row
            .iter()
            .zip(y_ter.iter())
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>();
    }
    acc / c as f64
}

/// One row of the per-step control log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub solve_ms: f64,
    pub iters: usize,
    pub converged: bool,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// `||y - y_ter||_2`.
    pub err: f64,
}

pub fn write_step_log<W: Write>(mut w: W, records: &[StepRecord]) -> Result<()> {
    let (m, c) = records.first().map_or((0, 0), |r| (r.u.len(), r.y.len()));
    let mut header = vec!["step".to_string(), "solve_ms".into(), "iters".into(), "converged".into()];
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend((1..=c).map(|i| format!("y_{i}")));
    header.push("err".into());
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let mut fields = vec![
            r.step.to_string(),
            format!("{:.6}", r.solve_ms),
            r.iters.to_string(),
            (r.converged as u8).to_string(),
        ];
        fields.extend(r.u.iter().map(|v| v.to_string()));
        fields.extend(r.y.iter().map(|v| v.to_string()));
        fields.push(r.err.to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracking_error_values() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(tracking_error(&y, &DVector::zeros(2)), 1.0);
        let at = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
        assert_eq!(tracking_error(&at, &DVector::from_vec(vec![0.5, -1.0])), 0.0);
        let y2 = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]);
        let y2x = &y2 * 2.0;
        let e1 = tracking_error(&y2, &DVector::zeros(2));
        let e2 = tracking_error(&y2x, &DVector::zeros(2));
        assert!((e2 - 4.0 * e1).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PlannerConfig::arm_defaults(9, 6);
        assert!(cfg.validate().is_ok());
        cfg.r[3] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PlannerConfig::arm_defaults(9, 6);
        cfg.u_bounds.min[0] = 2.0;
        cfg.u_bounds.max[0] = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn difference_operator_shape() {
        let d = difference_operator(3, 2);
        let x = DVector::from_vec(vec![1.0, 2.0, 4.0, 6.0, 5.0, 5.0]);
        assert_eq!((d * x).as_slice(), &[1.0, 2.0, 3.0, 4.0, 1.0, -1.0]);
    }

    #[test]
    fn step_log_layout() {
        let rec = StepRecord {
            step: 3,
            solve_ms: 0.25,
            iters: 17,
            converged: true,
            u: DVector::from_vec(vec![1.0, 2.0]),
            y: DVector::from_vec(vec![0.5]),
            err: 0.125,
        };
        let mut buf = Vec::new();
        write_step_log(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,solve_ms,iters,converged,u_1,u_2,y_1,err");
        assert_eq!(lines.next().unwrap(), "3,0.250000,17,1,1,2,0.5,0.125");
    }
}
