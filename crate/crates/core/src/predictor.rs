//! Condensed multi-step predictor built from a Hankel partition.
//!
//! Every window `(u_ini, y_ini, u)` consistent with the data is reproduced by
//! a coefficient vector over the Hankel columns; taking the minimum-norm
//! coefficients eliminates them and leaves a constant linear map `G` from
//! the stacked window to the predicted outputs.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, max_abs, pinv, stack_rows, unstack_rows, RANK_RTOL};
use crate::trajectory::{parse_f64, parse_usize, HankelPartition};

/// Most recent `n_ini` applied inputs and measured outputs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InitWindow {
    pub u_ini: DMatrix<f64>,
    pub y_ini: DMatrix<f64>,
}

impl InitWindow {
    pub fn new(u_ini: DMatrix<f64>, y_ini: DMatrix<f64>) -> Result<Self> {
        if u_ini.nrows() != y_ini.nrows() || u_ini.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "init window rows differ: u {} vs y {}",
                u_ini.nrows(),
                y_ini.nrows()
            )));
        }
        if !all_finite(&u_ini) || !all_finite(&y_ini) {
            return Err(Error::NonFinite("init window"));
        }
        Ok(Self { u_ini, y_ini })
    }

    pub fn zeros(n_ini: usize, m: usize, c: usize) -> Self {
        Self {
            u_ini: DMatrix::zeros(n_ini, m),
            y_ini: DMatrix::zeros(n_ini, c),
        }
    }

    pub fn n_ini(&self) -> usize {
        self.u_ini.nrows()
    }

    /// `[vec(u_ini); vec(y_ini)]`.
    pub fn stacked(&self) -> DVector<f64> {
        let u = stack_rows(&self.u_ini);
        let y = stack_rows(&self.y_ini);
        DVector::from_iterator(u.len() + y.len(), u.iter().chain(y.iter()).cloned())
    }
}

/// The `l`-step data-driven transition map `y = G [u_ini; y_ini; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GMatrix {
    map: DMatrix<f64>,
    m: usize,
    c: usize,
    n_ini: usize,
    l: usize,
}

impl GMatrix {
    pub fn from_map(map: DMatrix<f64>, m: usize, c: usize, n_ini: usize, l: usize) -> Result<Self> {
        let cols = (m + c) * n_ini + m * l;
        if map.shape() != (c * l, cols) {
            return Err(Error::Dimension(format!(
                "G must be {}x{}, got {:?}",
                c * l,
                cols,
                map.shape()
            )));
        }
        if !all_finite(&map) {
            return Err(Error::NonFinite("G matrix"));
        }
        Ok(Self { map, m, c, n_ini, l })
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn n_ini(&self) -> usize {
        self.n_ini
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn u_ini_cols(&self) -> Range<usize> {
        0..self.m * self.n_ini
    }

    pub fn y_ini_cols(&self) -> Range<usize> {
        let s = self.m * self.n_ini;
        s..s + self.c * self.n_ini
    }

    pub fn u_cols(&self) -> Range<usize> {
        let s = (self.m + self.c) * self.n_ini;
        s..s + self.m * self.l
    }

    /// Columns acting on the initial window.
    pub fn ini_block(&self) -> DMatrix<f64> {
        self.map.columns(0, (self.m + self.c) * self.n_ini).into_owned()
    }

    /// Columns acting on the future inputs.
    pub fn input_block(&self) -> DMatrix<f64> {
        let r = self.u_cols();
        self.map.columns(r.start, r.len()).into_owned()
    }

    fn check_window(&self, win: &InitWindow) -> Result<()> {
        if win.u_ini.shape() != (self.n_ini, self.m) || win.y_ini.shape() != (self.n_ini, self.c) {
            return Err(Error::Dimension(format!(
                "window must be {}x{} / {}x{}, got {:?} / {:?}",
                self.n_ini,
                self.m,
                self.n_ini,
                self.c,
                win.u_ini.shape(),
                win.y_ini.shape()
            )));
        }
        Ok(())
    }

    /// Free response `G_ini [u_ini; y_ini]` as a stacked `c*l` vector.
    pub fn free_response(&self, win: &InitWindow) -> Result<DVector<f64>> {
        self.check_window(win)?;
        Ok(self.ini_block() * win.stacked())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# gmatrix m={} c={} n_ini={} l={} rows={} cols={}",
            self.m,
            self.c,
            self.n_ini,
            self.l,
            self.map.nrows(),
            self.map.ncols()
        )?;
        for row in self.map.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty G file".into()))??;
        let body = header
            .strip_prefix("# gmatrix")
            .ok_or_else(|| Error::Parse("missing '# gmatrix' header".into()))?;
        let mut fields = std::collections::HashMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header token '{tok}'")))?;
            fields.insert(k.to_string(), parse_usize(v)?);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("header missing {k}")))
        };
        let (m, c, n_ini, l, rows, cols) = (get("m")?, get("c")?, get("n_ini")?, get("l")?, get("rows")?, get("cols")?);
        let mut values = Vec::with_capacity(rows * cols);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(parse_f64(tok)?);
            }
            if values.len() - before != cols {
                return Err(Error::Dimension(format!(
                    "G row has {} entries, header says {cols}",
                    values.len() - before
                )));
            }
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "G file holds {} rows, header says {rows}",
                values.len() / cols.max(1)
            )));
        }
        Self::from_map(DMatrix::from_row_slice(rows, cols, &values), m, c, n_ini, l)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_text(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_text(std::io::BufReader::new(f))
    }
}

/// Minimum-norm least-squares solution of `stack * k = rhs`.
pub fn solve_min_norm_k(stack: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if stack.ncols() == 0 {
        return Err(Error::Dimension("stack has no columns".into()));
    }
    if rhs.len() != stack.nrows() {
        return Err(Error::Dimension(format!(
            "rhs has {} entries, stack has {} rows",
            rhs.len(),
            stack.nrows()
        )));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rhs"));
    }
    Ok(pinv(stack, RANK_RTOL)? * rhs)
}

/// `G = Yf [Up; Yp; Uf]^+`.
pub fn compute_g_matrix(part: &HankelPartition) -> Result<GMatrix> {
    let stack = part.stacked_regressor();
    if stack.ncols() == 0 {
        return Err(Error::DegenerateData("Hankel partition has no columns".into()));
    }
    if max_abs(&stack) == 0.0 {
        return Err(Error::DegenerateData("regressor stack is identically zero".into()));
    }
    let map = &part.yf * pinv(&stack, RANK_RTOL)?;
    GMatrix::from_map(map, part.m, part.c, part.n_ini, part.l)
}

/// Predicted outputs (`l x c`) for the window and future inputs (`l x m`).
pub fn predict(g: &GMatrix, win: &InitWindow, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    g.check_window(win)?;
    if u.shape() != (g.l, g.m) {
        return Err(Error::Dimension(format!(
            "future inputs must be {}x{}, got {:?}",
            g.l,
            g.m,
            u.shape()
        )));
    }
    let y = g.ini_block() * win.stacked() + g.input_block() * stack_rows(u);
    Ok(unstack_rows(&y, g.l, g.c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{partition_hankel, Trajectory};

    #[test]
    fn identity_stack() {
        let k = solve_min_norm_k(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((k - DVector::from_vec(vec![3.0, 4.0])).norm() < 1e-14);
    }

    #[test]
    fn underdetermined_row_min_norm() {
        let k = solve_min_norm_k(
            &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert!((k[0] - 1.0).abs() < 1e-14 && (k[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = DMatrix::identity(2, 2);
        assert!(matches!(
            solve_min_norm_k(&s, &DVector::from_vec(vec![f64::NAN, 0.0])),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            solve_min_norm_k(&s, &DVector::zeros(3)),
            Err(Error::Dimension(_))
        ));
    }

    fn toy_partition(zero_outputs: bool) -> HankelPartition {
        let n = 60;
        let u = DMatrix::from_fn(n, 1, |t, _| ((t * 37 % 11) as f64) - 5.0);
        let y = if zero_outputs {
            DMatrix::zeros(n, 1)
        } else {
            DMatrix::from_fn(n, 1, |t, _| (t as f64).sin())
        };
        partition_hankel(&Trajectory::new(u, y, 1.0, "toy").unwrap(), 2, 3).unwrap()
    }

    #[test]
    fn zero_outputs_give_zero_g() {
        let g = compute_g_matrix(&toy_partition(true)).unwrap();
        assert!(g.map().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_stack() {
        let t = Trajectory::new(DMatrix::zeros(10, 1), DMatrix::zeros(10, 1), 1.0, "").unwrap();
        let p = partition_hankel(&t, 1, 1).unwrap();
        assert!(matches!(compute_g_matrix(&p), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn arm_scale_width() {
        let n = 200;
        let u = DMatrix::from_fn(n, 9, |t, j| ((t * 31 + j * 7) % 13) as f64);
        let y = DMatrix::from_fn(n, 6, |t, j| ((t * 5 + j * 3) % 7) as f64);
        let p = partition_hankel(&Trajectory::new(u, y, 0.02, "").unwrap(), 2, 6).unwrap();
        let g = compute_g_matrix(&p).unwrap();
        assert_eq!(g.map().shape(), (36, 84));
        assert_eq!(g.u_ini_cols(), 0..18);
        assert_eq!(g.y_ini_cols(), 18..30);
        assert_eq!(g.u_cols(), 30..84);
    }

    #[test]
    fn zero_window_zero_prediction() {
        let g = compute_g_matrix(&toy_partition(false)).unwrap();
        let y = predict(&g, &InitWindow::zeros(2, 1, 1), &DMatrix::zeros(3, 1)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(predict(&g, &InitWindow::zeros(2, 1, 1), &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let g = compute_g_matrix(&toy_partition(false)).unwrap();
        let mut buf = Vec::new();
        g.write_text(&mut buf).unwrap();
        let back = GMatrix::read_text(&buf[..]).unwrap();
        assert_eq!(back, g);
    }
}
