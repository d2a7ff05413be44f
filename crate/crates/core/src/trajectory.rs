//! Recorded input-output data and the block-Hankel structures built from it.
//!
//! Signals are stored time-major: row `t` of a `T x d` matrix is the sample
//! at time `t`. A depth-`L` block-Hankel matrix stacks `L` consecutive
//! samples per column, each sample occupying a contiguous `d`-row slab, so
//! column `j` is the window `s_j, ..., s_{j+L-1}`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, numerical_rank, RANK_RTOL};
use crate::plants::Plant;

/// Input, output and assumed state dimensions of a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemDims {
    pub m: usize,
    pub c: usize,
    pub h: usize,
}

impl SystemDims {
    pub fn new(m: usize, c: usize, h: usize) -> Result<Self> {
        if m == 0 || c == 0 || h == 0 {
            return Err(Error::Config(format!(
                "system dims must be >= 1 (m={m}, c={c}, h={h})"
            )));
        }
        Ok(Self { m, c, h })
    }
}

/// A recorded input-output trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    dt: f64,
    label: String,
}

impl Trajectory {
    pub fn new(
        inputs: DMatrix<f64>,
        outputs: DMatrix<f64>,
        dt: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        if inputs.nrows() != outputs.nrows() {
            return Err(Error::Dimension(format!(
                "inputs have {} rows, outputs have {}",
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        if inputs.nrows() == 0 || inputs.ncols() == 0 || outputs.ncols() == 0 {
            return Err(Error::Dimension("trajectory must be non-empty".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("sample period must be > 0, got {dt}")));
        }
        if !all_finite(&inputs) || !all_finite(&outputs) {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(Self {
            inputs,
            outputs,
            dt,
            label: label.into(),
        })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    /// Rows `start..start + len` as a new trajectory.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::InsufficientData {
                needed: start + len,
                available: self.len(),
            });
        }
        Self::new(
            self.inputs.rows(start, len).into_owned(),
            self.outputs.rows(start, len).into_owned(),
            self.dt,
            self.label.clone(),
        )
    }

    /// Concatenates trajectories in time. All parts must share dims and dt.
    pub fn concat(parts: &[&Trajectory], label: impl Into<String>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("nothing to concatenate".into()))?;
        let (m, c, dt) = (first.input_dim(), first.output_dim(), first.dt);
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut inputs = DMatrix::zeros(total, m);
        let mut outputs = DMatrix::zeros(total, c);
        let mut row = 0;
        for p in parts {
            if p.input_dim() != m || p.output_dim() != c || (p.dt - dt).abs() > 1e-12 {
                return Err(Error::Dimension(
                    "concatenated trajectories must share dims and dt".into(),
                ));
            }
            inputs.rows_mut(row, p.len()).copy_from(&p.inputs);
            outputs.rows_mut(row, p.len()).copy_from(&p.outputs);
            row += p.len();
        }
        Self::new(inputs, outputs, dt, label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let label: String = self
            .label
            .chars()
            .map(|ch| if ch.is_whitespace() { '_' } else { ch })
            .collect();
        let (m, c) = (self.input_dim(), self.output_dim());
        writeln!(w, "# dt={} label={} m={} c={}", self.dt, label, m, c)?;
        let mut header = String::from("t");
        for i in 1..=m {
            write!(header, ",u_{i}").unwrap();
        }
        for i in 1..=c {
            write!(header, ",y_{i}").unwrap();
        }
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for t in 0..self.len() {
            line.clear();
            write!(line, "{}", t as f64 * self.dt).unwrap();
            for v in self.inputs.row(t).iter().chain(self.outputs.row(t).iter()) {
                write!(line, ",{v}").unwrap();
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let meta = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
        let meta = meta
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("missing '# dt=... ' metadata line".into()))?;
        let (mut dt, mut label, mut m, mut c) = (None, String::new(), None, None);
        for tok in meta.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad metadata token '{tok}'")))?;
            match k {
                "dt" => dt = Some(parse_f64(v)?),
                "label" => label = v.to_string(),
                "m" => m = Some(parse_usize(v)?),
                "c" => c = Some(parse_usize(v)?),
                _ => {}
            }
        }
        let dt = dt.ok_or_else(|| Error::Parse("metadata missing dt".into()))?;
        let m = m.ok_or_else(|| Error::Parse("metadata missing m".into()))?;
        let c = c.ok_or_else(|| Error::Parse("metadata missing c".into()))?;
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing header row".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() != 1 + m + c || cols[0] != "t" {
            return Err(Error::Dimension(format!(
                "header has {} columns, metadata implies {}",
                cols.len(),
                1 + m + c
            )));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 1 + m + c {
                return Err(Error::Dimension(format!(
                    "row {rows} has {} fields, expected {}",
                    fields.len(),
                    1 + m + c
                )));
            }
            for f in &fields[1..] {
                values.push(parse_f64(f)?);
            }
            rows += 1;
        }
        let all = DMatrix::from_row_slice(rows, m + c, &values);
        Self::new(
            all.columns(0, m).into_owned(),
            all.columns(m, c).into_owned(),
            dt,
            label,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a number: '{s}'")))
}

pub(crate) fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a count: '{s}'")))
}

/// Block-Hankel arrangement of a vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub data: DMatrix<f64>,
    pub depth: usize,
    pub signal_dim: usize,
}

impl HankelMatrix {
    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Block rows `start..start + count` (each `signal_dim` rows tall).
    pub fn block_rows(&self, start: usize, count: usize) -> DMatrix<f64> {
        let d = self.signal_dim;
        self.data.rows(start * d, count * d).into_owned()
    }
}

/// Builds the depth-`depth` block-Hankel matrix of a time-major signal.
pub fn build_hankel(signal: &DMatrix<f64>, depth: usize) -> Result<HankelMatrix> {
    let (t, d) = signal.shape();
    if depth < 1 || depth > t {
        return Err(Error::InvalidDepth { depth, len: t });
    }
    let cols = t - depth + 1;
    let data = DMatrix::from_fn(depth * d, cols, |r, j| signal[(r / d + j, r % d)]);
    Ok(HankelMatrix {
        data,
        depth,
        signal_dim: d,
    })
}

/// True iff the depth-`order` Hankel of `signal` has full row rank.
pub fn is_persistently_exciting(signal: &DMatrix<f64>, order: usize) -> Result<bool> {
    let t = signal.nrows();
    if order == 0 {
        return Err(Error::InvalidDepth { depth: 0, len: t });
    }
    if t < order {
        return Err(Error::InsufficientData {
            needed: order,
            available: t,
        });
    }
    let h = build_hankel(signal, order)?;
    let rows = h.data.nrows();
    if h.ncols() < rows {
        return Ok(false);
    }
    Ok(numerical_rank(&h.data, RANK_RTOL) == rows)
}

/// Smallest data length for which the stacked Hankel is at least square:
/// `max{(m+1)(n_ini+l+h), (m+c+1)(n_ini+l)}`.
pub fn min_data_length(dims: SystemDims, n_ini: usize, l: usize) -> usize {
    let SystemDims { m, c, h } = dims;
    let depth = n_ini + l;
    ((m + 1) * (depth + h)).max((m + c + 1) * depth)
}

/// Past/future split of the input and output Hankels.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPartition {
    pub up: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    pub n_ini: usize,
    pub l: usize,
    pub m: usize,
    pub c: usize,
    /// Whether the input was persistently exciting of order `n_ini + l`.
    pub persistently_exciting: bool,
}

impl HankelPartition {
    pub fn width(&self) -> usize {
        self.up.ncols()
    }

    /// `[Up; Yp; Uf]`, the operand of the pseudo-inverse.
    pub fn stacked_regressor(&self) -> DMatrix<f64> {
        let w = self.width();
        let rows = self.up.nrows() + self.yp.nrows() + self.uf.nrows();
        let mut s = DMatrix::zeros(rows, w);
        let mut r = 0;
        for block in [&self.up, &self.yp, &self.uf] {
            s.rows_mut(r, block.nrows()).copy_from(block);
            r += block.nrows();
        }
        s
    }
}

/// Splits the depth-`n_ini + l` input/output Hankels into past and future rows.
///
/// A non-persistently-exciting input only logs a warning.
pub fn partition_hankel(traj: &Trajectory, n_ini: usize, l: usize) -> Result<HankelPartition> {
    if n_ini == 0 || l == 0 {
        return Err(Error::Config("n_ini and l must be >= 1".into()));
    }
    let depth = n_ini + l;
    if traj.len() < depth {
        return Err(Error::InsufficientData {
            needed: depth,
            available: traj.len(),
        });
    }
    let hu = build_hankel(traj.inputs(), depth)?;
    let hy = build_hankel(traj.outputs(), depth)?;
    let pe = is_persistently_exciting(traj.inputs(), depth)?;
    if !pe {
        warn!(
            "input of '{}' is not persistently exciting of order {depth}",
            traj.label()
        );
    }
    Ok(HankelPartition {
        up: hu.block_rows(0, n_ini),
        uf: hu.block_rows(n_ini, l),
        yp: hy.block_rows(0, n_ini),
        yf: hy.block_rows(n_ini, l),
        n_ini,
        l,
        m: traj.input_dim(),
        c: traj.output_dim(),
        persistently_exciting: pe,
    })
}

/// Drives `plant` open-loop with `inputs` (one row per step) and records the
/// output returned by each step. Measurement noise is drawn from a generator
/// seeded with `seed`.
pub fn record_episode(plant: &mut dyn Plant, inputs: &DMatrix<f64>, seed: u64) -> Result<Trajectory> {
    if inputs.ncols() != plant.input_dim() {
        return Err(Error::Dimension(format!(
            "plant takes {} inputs, episode has {}",
            plant.input_dim(),
            inputs.ncols()
        )));
    }
    if !all_finite(inputs) {
        return Err(Error::NonFinite("episode inputs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = plant.output_dim();
    let mut outputs = DMatrix::zeros(inputs.nrows(), c);
    for t in 0..inputs.nrows() {
        let u: DVector<f64> = inputs.row(t).transpose();
        match plant.step(&u, &mut rng) {
            Ok(y) => outputs.row_mut(t).copy_from(&y.transpose()),
            Err(e) => {
                let source = Box::new(e);
                if t == 0 {
                    return Err(*source);
                }
                let partial = Trajectory::new(
                    inputs.rows(0, t).into_owned(),
                    outputs.rows(0, t).into_owned(),
                    plant.dt(),
                    plant.label(),
                )?;
                return Err(Error::EpisodeAborted {
                    partial: Box::new(partial),
                    source,
                });
            }
        }
    }
    Trajectory::new(inputs.clone(), outputs, plant.dt(), plant.label())
}
