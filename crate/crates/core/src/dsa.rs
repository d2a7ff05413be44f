//! Dataset selection: pick, from a bank of recorded trajectories, the one
//! whose Hankel span explains a fresh sample window with the smallest
//! coefficient vector.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::stack_rows;
use crate::mlp::MlpModel;
use crate::predictor::{compute_g_matrix, GMatrix};
use crate::trajectory::{
    build_hankel, min_data_length, partition_hankel, HankelMatrix, HankelPartition, SystemDims, Trajectory,
};

/// Default output-residual weight.
pub const DEFAULT_SIGMA_WEIGHT: f64 = 1.0;

/// Recent `L x m` inputs and `L x c` outputs measured online.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub u_s: DMatrix<f64>,
    pub y_s: DMatrix<f64>,
}

impl SampleWindow {
    pub fn new(u_s: DMatrix<f64>, y_s: DMatrix<f64>) -> Result<Self> {
        if u_s.nrows() != y_s.nrows() {
            return Err(Error::Dimension("sample window input/output lengths differ".into()));
        }
        if u_s.iter().chain(y_s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample window"));
        }
        Ok(Self { u_s, y_s })
    }

    /// The `len` samples of `traj` starting at `start`.
    pub fn from_trajectory(traj: &Trajectory, start: usize, len: usize) -> Result<Self> {
        let s = traj.slice(start, len)?;
        Self::new(s.inputs().clone(), s.outputs().clone())
    }

    pub fn len(&self) -> usize {
        self.u_s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u_s.nrows() == 0
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.u_s.shape().hash(&mut h);
        self.y_s.shape().hash(&mut h);
        for v in self.u_s.iter().chain(self.y_s.iter()) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// One recorded dataset together with everything precomputed from it.
#[derive(Debug, Clone)]
pub struct BankEntry {
    pub label: String,
    pub trajectory: Trajectory,
    pub hu: HankelMatrix,
    pub hy: HankelMatrix,
    pub partition: HankelPartition,
    pub g: GMatrix,
    pub inverse_model: Option<MlpModel>,
    grams: Grams,
}

/// `Hu Huᵀ`, `Hy Hyᵀ` and `Hy Huᵀ`; window independent.
#[derive(Debug, Clone)]
struct Grams {
    uu: DMatrix<f64>,
    yy: DMatrix<f64>,
    yu: DMatrix<f64>,
}

impl BankEntry {
    fn build(label: String, trajectory: Trajectory, inverse_model: Option<MlpModel>, n_ini: usize, l: usize) -> Result<Self> {
        let depth = n_ini + l;
        let hu = build_hankel(trajectory.inputs(), depth)?;
        let hy = build_hankel(trajectory.outputs(), depth)?;
        let partition = partition_hankel(&trajectory, n_ini, l)?;
        let g = compute_g_matrix(&partition)?;
        let grams = Grams {
            uu: &hu.data * hu.data.transpose(),
            yy: &hy.data * hy.data.transpose(),
            yu: &hy.data * hu.data.transpose(),
        };
        Ok(Self {
            label,
            trajectory,
            hu,
            hy,
            partition,
            g,
            inverse_model,
            grams,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetBank {
    entries: Vec<BankEntry>,
    n_ini: usize,
    l: usize,
}

impl DatasetBank {
    /// Builds Hankels, Gram matrices and G for every entry.
    ///
    /// `h` is the (assumed) state dimension used for the data-length bound.
    pub fn new(datasets: Vec<(String, Trajectory, Option<MlpModel>)>, n_ini: usize, l: usize, h: usize) -> Result<Self> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::Config("dataset bank must have at least one entry".into()))?;
        let (m, c, dt, n) = (first.1.input_dim(), first.1.output_dim(), first.1.dt(), first.1.len());
        for (label, t, _) in &datasets {
            if t.input_dim() != m || t.output_dim() != c || t.dt() != dt || t.len() != n {
                return Err(Error::Dimension(format!(
                    "bank entry '{label}' differs from the first in dims, dt or length"
                )));
            }
        }
        let needed = min_data_length(SystemDims::new(m, c, h)?, n_ini, l);
        if n < needed {
            return Err(Error::InsufficientData { needed, available: n });
        }
        let entries = datasets
            .into_iter()
            .map(|(label, t, model)| BankEntry::build(label, t, model, n_ini, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, n_ini, l })
    }

    /// Reads a manifest of `label,trajectory_csv[,inverse_model]` lines;
    /// relative paths resolve against the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>, n_ini: usize, l: usize, h: usize) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let f = std::fs::File::open(path)?;
        let mut datasets = Vec::new();
        for rec in parse_manifest(std::io::BufReader::new(f))? {
            let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
            let traj = Trajectory::load(resolve(&rec.trajectory))?;
            let model = rec.inverse_model.as_ref().map(|p| MlpModel::load(resolve(p))).transpose()?;
            datasets.push((rec.label, traj, model));
        }
        Self::new(datasets, n_ini, l, h)
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.n_ini + self.l
    }

    pub fn n_ini(&self) -> usize {
        self.n_ini
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Scores every entry; failing entries score `+inf`.
    pub fn scores(&self, win: &SampleWindow, sigma_weight: f64) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| score_dataset(e, win, sigma_weight).unwrap_or(f64::INFINITY))
            .collect()
    }

    /// Like [`select_dataset`] but memoises scores per window.
    pub fn select_cached(&self, win: &SampleWindow, sigma_weight: f64, cache: &mut ScoreCache) -> Result<(usize, Vec<f64>)> {
        let key = (win.fingerprint(), sigma_weight.to_bits());
        let scores = match cache.map.get(&key) {
            Some(s) => {
                cache.hits += 1;
                s.clone()
            }
            None => {
                let s = self.scores(win, sigma_weight);
                cache.map.insert(key, s.clone());
                s
            }
        };
        argmin(&scores).map(|i| (i, scores))
    }

    /// G matrix over all entries jointly: the per-entry Hankel partitions are
    /// placed side by side, so no column straddles two recordings.
    pub fn pooled_g_matrix(&self) -> Result<GMatrix> {
        let parts: Vec<&HankelPartition> = self.entries.iter().map(|e| &e.partition).collect();
        compute_g_matrix(&hconcat_partitions(&parts)?)
    }
}

/// Column-wise concatenation of partitions with equal shapes.
pub fn hconcat_partitions(parts: &[&HankelPartition]) -> Result<HankelPartition> {
    let first = *parts
        .first()
        .ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
    if parts
        .iter()
        .any(|p| (p.n_ini, p.l, p.m, p.c) != (first.n_ini, first.l, first.m, first.c))
    {
        return Err(Error::Dimension("partitions differ in dims".into()));
    }
    let width: usize = parts.iter().map(|p| p.width()).sum();
    let join = |f: fn(&HankelPartition) -> &DMatrix<f64>| {
        let rows = f(first).nrows();
        let mut out = DMatrix::zeros(rows, width);
        let mut col = 0;
        for p in parts {
            let b = f(p);
            out.columns_mut(col, b.ncols()).copy_from(b);
            col += b.ncols();
        }
        out
    };
    Ok(HankelPartition {
        up: join(|p| &p.up),
        yp: join(|p| &p.yp),
        uf: join(|p| &p.uf),
        yf: join(|p| &p.yf),
        n_ini: first.n_ini,
        l: first.l,
        m: first.m,
        c: first.c,
        persistently_exciting: parts.iter().all(|p| p.persistently_exciting),
    })
}

/// Per-window memo of bank scores.
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: HashMap<(u64, u64), Vec<f64>>,
    pub hits: usize,
}

impl ScoreCache {
    pub fn clear(&mut self) {
        self.map.clear();
    }
}

/// `‖K‖₂` for the K minimising `‖K‖² + λ‖Hy K − y_s‖²` subject to
/// `Hu K = u_s`.
///
/// With `M = I + λ HyᵀHy` the stationarity condition gives
/// `K = M⁻¹(λ Hyᵀ y_s + Huᵀ ν)` and `(Hu M⁻¹ Huᵀ) ν = u_s − λ Hu M⁻¹ Hyᵀ y_s`.
/// `M⁻¹` is applied through the Woodbury identity so only `L(m+c)`-sized
/// systems are factored.
pub fn score_dataset(entry: &BankEntry, win: &SampleWindow, sigma_weight: f64) -> Result<f64> {
    Ok(solve_window_coefficients(entry, win, sigma_weight)?.norm())
}

/// The coefficient vector K behind [`score_dataset`].
pub fn solve_window_coefficients(entry: &BankEntry, win: &SampleWindow, sigma_weight: f64) -> Result<DVector<f64>> {
    let lam = sigma_weight;
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::Config(format!("sigma weight must be positive, got {lam}")));
    }
    let depth = entry.hu.depth;
    if win.u_s.shape() != (depth, entry.hu.signal_dim) || win.y_s.shape() != (depth, entry.hy.signal_dim) {
        return Err(Error::Dimension(format!(
            "window must be {depth}x{} / {depth}x{}",
            entry.hu.signal_dim, entry.hy.signal_dim
        )));
    }
    let us = stack_rows(&win.u_s);
    let ys = stack_rows(&win.y_s);
    let hu = &entry.hu.data;
    let hy = &entry.hy.data;
    let g = &entry.grams;

    let cy_mat = DMatrix::identity(g.yy.nrows(), g.yy.ncols()) + &g.yy * lam;
    let cy = Cholesky::new(cy_mat).ok_or_else(|| Error::DegenerateData("output Gram not positive definite".into()))?;
    // Cy⁻¹ Hy Huᵀ and Cy⁻¹ Hy Hyᵀ ys
    let cy_yu = cy.solve(&g.yu);
    let gyy_ys = &g.yy * &ys;
    let cy_yy_ys = cy.solve(&gyy_ys);

    // Hu M⁻¹ Huᵀ
    let schur = &g.uu - g.yu.transpose() * &cy_yu * lam;
    // Hu M⁻¹ Hyᵀ ys = Huyᵀys − λ Gyuᵀ Cy⁻¹ Gyy ys
    let hu_minv_hy_ys = g.yu.transpose() * &ys - g.yu.transpose() * &cy_yy_ys * lam;
    let rhs = &us - hu_minv_hy_ys * lam;
    let schur = Cholesky::new(symmetrize(schur))
        .ok_or_else(|| Error::DegenerateData("input Hankel lacks full row rank; KKT system singular".into()))?;
    let nu = schur.solve(&rhs);

    let b = hu.transpose() * nu + hy.transpose() * &ys * lam;
    // M⁻¹ b = b − λ Hyᵀ Cy⁻¹ Hy b
    let k = &b - hy.transpose() * cy.solve(&(hy * &b)) * lam;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("window coefficients"));
    }
    Ok(k)
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// Index of the smallest score (lowest index on ties) and all scores.
pub fn select_dataset(bank: &DatasetBank, win: &SampleWindow, sigma_weight: f64) -> Result<(usize, Vec<f64>)> {
    if bank.is_empty() {
        return Err(Error::Config("dataset bank is empty".into()));
    }
    let scores = bank.scores(win, sigma_weight);
    argmin(&scores).map(|i| (i, scores))
}

fn argmin(scores: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::SelectionFailed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub label: String,
    pub trajectory: PathBuf,
    pub inverse_model: Option<PathBuf>,
}

/// Parses `label,path[,model]` lines; blank lines and `#` comments skipped.
pub fn parse_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse(format!("manifest line {}: expected label,path[,model]", i + 1)));
        }
        out.push(ManifestRecord {
            label: fields[0].to_string(),
            trajectory: PathBuf::from(fields[1]),
            inverse_model: fields.get(2).filter(|s| !s.is_empty()).map(PathBuf::from),
        });
    }
    Ok(out)
}

/// Rows are conditions, columns bank entries, with a trailing argmin column.
pub fn format_score_table(entry_labels: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("condition");
    for l in entry_labels {
        s.push(',');
        s.push_str(l);
    }
    s.push_str(",argmin\n");
    for (name, scores) in rows {
        s.push_str(name);
        for v in scores {
            s.push_str(&format!(",{v:.4}"));
        }
        let best = argmin(scores).map(|i| entry_labels[i].clone()).unwrap_or_else(|_| "none".into());
        s.push_str(&format!(",{best}\n"));
    }
    s
}
