//! Small fully connected regressors for the forward (motor -> joint) and
//! inverse (joint -> motor) reference maps.
//!
//! Training minimises the RMSE in normalised space with Adam over seeded
//! minibatches and keeps the parameters with the best validation RMSE.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trajectory::{parse_f64, parse_usize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// Per-channel affine normalisation `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            scale: DVector::from_element(dim, 1.0),
        }
    }

    /// Column means and standard deviations of the selected rows.
    pub fn fit(data: &DMatrix<f64>, rows: &[usize]) -> Self {
        let d = data.ncols();
        let n = rows.len().max(1) as f64;
        let mut mean = DVector::zeros(d);
        for &r in rows {
            for j in 0..d {
                mean[j] += data[(r, j)];
            }
        }
        mean /= n;
        let mut var = DVector::zeros(d);
        for &r in rows {
            for j in 0..d {
                let e = data[(r, j)] - mean[j];
                var[j] += e * e;
            }
        }
        let scale = var.map(|v: f64| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.mean).component_div(&self.scale)
    }

    pub fn invert(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.scale) + &self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub input_norm: Normalization,
    pub output_norm: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 128,
            epochs: 100,
            hidden: 256,
            hidden_layers: 3,
            seed: 42,
            split: (0.8, 0.1, 0.1),
        }
    }
}

impl TrainConfig {
    /// Reduced width and epoch budget for quick runs.
    pub fn desk_scale() -> Self {
        Self {
            hidden: 64,
            epochs: 30,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must be positive and sum to 1".into()));
        }
        if !(self.lr > 0.0) || self.batch == 0 || self.epochs == 0 || self.hidden == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("training hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

/// Train/validation/test row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut at the configured fractions.
pub fn split_indices(n: usize, split: (f64, f64, f64), seed: u64) -> DataSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * split.0).round() as usize;
    let n_val = ((n as f64) * split.1).round() as usize;
    let n_val = n_val.min(n - n_train);
    DataSplit {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch (normalised RMSE).
    pub train_loss: Vec<f64>,
    /// Validation RMSE in normalised units; entry 0 is the untrained model.
    pub val_rmse: Vec<f64>,
    /// Epoch (1-based, 0 = initial) whose parameters were kept.
    pub best_epoch: usize,
    /// Test RMSE of the kept model in normalised units.
    pub test_rmse_normalized: f64,
    /// Test RMSE of the kept model in data units.
    pub test_rmse: f64,
    pub split: DataSplit,
}

/// Cached activations for a batch, inputs as columns.
struct Trace {
    activations: Vec<DMatrix<f64>>,
}

impl MlpModel {
    /// Glorot-uniform initialisation.
    pub fn init(in_dim: usize, out_dim: usize, hidden: usize, hidden_layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(hidden, hidden_layers));
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Self {
            layers,
            activation: Activation::Tanh,
            input_norm: Normalization::identity(in_dim),
            output_norm: Normalization::identity(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn forward_normalized(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            a = &layer.weights * a + &layer.bias;
            if i != last {
                a.apply(|v| *v = v.tanh());
            }
        }
        a
    }

    fn forward_batch(&self, x: &DMatrix<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = vec![x.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * acts.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if i != last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Trace { activations: acts }
    }

    /// RMSE over all entries and its gradients for a batch in normalised
    /// space (columns are samples).
    fn loss_and_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<Layer>) {
        let trace = self.forward_batch(x);
        let out = trace.activations.last().expect("non-empty");
        let diff = out - y;
        let count = diff.len() as f64;
        let rmse = (diff.norm_squared() / count).sqrt();
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect();
        if rmse == 0.0 {
            return (0.0, grads);
        }
        let mut delta = diff / (count * rmse);
        for i in (0..self.layers.len()).rev() {
            let input = &trace.activations[i];
            grads[i].weights = &delta * input.transpose();
            grads[i].bias = delta.column_sum();
            if i > 0 {
                let mut back = self.layers[i].weights.transpose() * &delta;
                // tanh' = 1 - a^2 on the previous layer's activation.
                back.zip_apply(input, |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        (rmse, grads)
    }

    /// Normalised-space RMSE over the selected rows.
    fn rmse_on(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let (xb, yb) = self.batch_columns(x, y, rows);
        let out = self.forward_batch(&xb).activations.pop().expect("non-empty");
        ((out - yb).norm_squared() / (rows.len() * self.out_dim()) as f64).sqrt()
    }

    fn batch_columns(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, rows: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let xb = DMatrix::from_fn(x.ncols(), rows.len(), |i, k| {
            (x[(rows[k], i)] - self.input_norm.mean[i]) / self.input_norm.scale[i]
        });
        let yb = DMatrix::from_fn(y.ncols(), rows.len(), |i, k| {
            (y[(rows[k], i)] - self.output_norm.mean[i]) / self.output_norm.scale[i]
        });
        (xb, yb)
    }

    pub fn infer(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.in_dim(), "input dimension");
        self.output_norm
            .invert(&self.forward_normalized(&self.input_norm.apply(x)))
    }

    /// Row-wise inference; identical to calling [`MlpModel::infer`] per row.
    pub fn infer_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), self.out_dim());
        for r in 0..x.nrows() {
            let y = self.infer(&x.row(r).transpose());
            out.row_mut(r).copy_from(&y.transpose());
        }
        out
    }

    /// Input range seen during training, as `mean +/- k * scale`.
    pub fn within_training_range(&self, x: &DVector<f64>, k: f64) -> bool {
        self.input_norm
            .apply(x)
            .iter()
            .all(|v| v.is_finite() && v.abs() <= k)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let hidden: Vec<String> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.nrows().to_string())
            .collect();
        writeln!(
            w,
            "# mlp in={} out={} hidden={} activation={}",
            self.in_dim(),
            self.out_dim(),
            hidden.join(","),
            self.activation.name()
        )?;
        let line = |v: &DVector<f64>| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "input_mean {}", line(&self.input_norm.mean))?;
        writeln!(w, "input_scale {}", line(&self.input_norm.scale))?;
        writeln!(w, "output_mean {}", line(&self.output_norm.mean))?;
        writeln!(w, "output_scale {}", line(&self.output_norm.scale))?;
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(w, "layer {} {} {}", i, layer.weights.nrows(), layer.weights.ncols())?;
            for row in layer.weights.row_iter() {
                writeln!(w, "{}", line(&row.transpose()))?;
            }
            writeln!(w, "bias {}", line(&layer.bias))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().filter(|l| !l.trim().is_empty());
        let header = it.next().ok_or_else(|| Error::Parse("empty model file".into()))?;
        let body = header
            .strip_prefix("# mlp")
            .ok_or_else(|| Error::Parse("missing '# mlp' header".into()))?;
        let mut in_dim = None;
        let mut out_dim = None;
        let mut hidden = Vec::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header token '{tok}'")))?;
            match k {
                "in" => in_dim = Some(parse_usize(v)?),
                "out" => out_dim = Some(parse_usize(v)?),
                "hidden" => {
                    hidden = v.split(',').filter(|s| !s.is_empty()).map(parse_usize).collect::<Result<_>>()?
                }
                "activation" if v != "tanh" => {
                    return Err(Error::Parse(format!("unsupported activation '{v}'")))
                }
                _ => {}
            }
        }
        let in_dim = in_dim.ok_or_else(|| Error::Parse("header missing in".into()))?;
        let out_dim = out_dim.ok_or_else(|| Error::Parse("header missing out".into()))?;
        let mut vector = |tag: &str, len: usize| -> Result<DVector<f64>> {
            let l = it.next().ok_or_else(|| Error::Parse(format!("missing {tag}")))?;
            let rest = l
                .strip_prefix(tag)
                .ok_or_else(|| Error::Parse(format!("expected '{tag}'")))?;
            let vals: Vec<f64> = rest.split_whitespace().map(parse_f64).collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(Error::Dimension(format!("{tag} has {} values, expected {len}", vals.len())));
            }
            Ok(DVector::from_vec(vals))
        };
        let input_norm = Normalization {
            mean: vector("input_mean", in_dim)?,
            scale: vector("input_scale", in_dim)?,
        };
        let output_norm = Normalization {
            mean: vector("output_mean", out_dim)?,
            scale: vector("output_scale", out_dim)?,
        };
        let mut dims = vec![in_dim];
        dims.extend(&hidden);
        dims.push(out_dim);
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let head = vector_line(&mut it, "layer")?;
            let expect = [i, w[1], w[0]];
            let got: Vec<usize> = head.split_whitespace().map(parse_usize).collect::<Result<_>>()?;
            if got != expect {
                return Err(Error::Dimension(format!("layer header {got:?}, expected {expect:?}")));
            }
            let mut vals = Vec::with_capacity(w[0] * w[1]);
            for _ in 0..w[1] {
                let l = it.next().ok_or_else(|| Error::Parse("truncated weights".into()))?;
                let row: Vec<f64> = l.split_whitespace().map(parse_f64).collect::<Result<_>>()?;
                if row.len() != w[0] {
                    return Err(Error::Dimension("weight row length".into()));
                }
                vals.extend(row);
            }
            let bias_line = vector_line(&mut it, "bias")?;
            let bias: Vec<f64> = bias_line.split_whitespace().map(parse_f64).collect::<Result<_>>()?;
            if bias.len() != w[1] {
                return Err(Error::Dimension("bias length".into()));
            }
            layers.push(Layer {
                weights: DMatrix::from_row_slice(w[1], w[0], &vals),
                bias: DVector::from_vec(bias),
            });
        }
        Ok(Self {
            layers,
            activation: Activation::Tanh,
            input_norm,
            output_norm,
        })
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

fn vector_line<'a>(it: &mut impl Iterator<Item = &'a String>, tag: &str) -> Result<&'a str> {
    let l = it.next().ok_or_else(|| Error::Parse(format!("missing {tag}")))?;
    l.strip_prefix(tag)
        .ok_or_else(|| Error::Parse(format!("expected '{tag}'")))
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &MlpModel) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &[Layer], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for (i, layer) in model.layers.iter_mut().enumerate() {
            for k in 0..layer.weights.len() {
                update(
                    &mut layer.weights[k],
                    grads[i].weights[k],
                    &mut self.m[i].weights[k],
                    &mut self.v[i].weights[k],
                );
            }
            for k in 0..layer.bias.len() {
                update(
                    &mut layer.bias[k],
                    grads[i].bias[k],
                    &mut self.m[i].bias[k],
                    &mut self.v[i].bias[k],
                );
            }
        }
    }
}

/// Fits `inputs -> targets` (rows are samples).
pub fn train(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    let n = inputs.nrows();
    if targets.nrows() != n {
        return Err(Error::Dimension("inputs and targets differ in sample count".into()));
    }
    if n < 10 * cfg.batch {
        return Err(Error::InsufficientData {
            needed: 10 * cfg.batch,
            available: n,
        });
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    let split = split_indices(n, cfg.split, cfg.seed);
    let mut model = MlpModel::init(inputs.ncols(), targets.ncols(), cfg.hidden, cfg.hidden_layers, cfg.seed);
    model.input_norm = Normalization::fit(inputs, &split.train);
    model.output_norm = Normalization::fit(targets, &split.train);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(&model);
    let mut order = split.train.clone();
    let mut best = model.clone();
    let mut best_val = model.rmse_on(inputs, targets, &split.val);
    let mut best_epoch = 0;
    let mut val_rmse = vec![best_val];
    let mut train_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let (xb, yb) = model.batch_columns(inputs, targets, chunk);
            let (loss, grads) = model.loss_and_grad(&xb, &yb);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut model, &grads, cfg.lr);
            acc += loss;
            batches += 1;
        }
        train_loss.push(acc / batches as f64);
        let val = model.rmse_on(inputs, targets, &split.val);
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        val_rmse.push(val);
        if val < best_val {
            best_val = val;
            best = model.clone();
            best_epoch = epoch;
        }
    }

    let test_rmse_normalized = best.rmse_on(inputs, targets, &split.test);
    let test_rmse = if split.test.is_empty() {
        0.0
    } else {
        let mut sq = 0.0;
        for &r in &split.test {
            let y = best.infer(&inputs.row(r).transpose());
            sq += (y - targets.row(r).transpose()).norm_squared();
        }
        (sq / (split.test.len() * targets.ncols()) as f64).sqrt()
    };
    Ok((
        best,
        TrainReport {
            train_loss,
            val_rmse,
            best_epoch,
            test_rmse_normalized,
            test_rmse,
            split,
        },
    ))
}

/// Largest relative discrepancy between the analytic RMSE gradient for one
/// sample and central finite differences with step `eps`.
///
/// The relative error of each parameter is `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn gradient_check(model: &MlpModel, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    let xb = DMatrix::from_column_slice(x.len(), 1, model.input_norm.apply(x).as_slice());
    let yb = DMatrix::from_column_slice(y.len(), 1, model.output_norm.apply(y).as_slice());
    let (_, grads) = model.loss_and_grad(&xb, &yb);
    let loss = |m: &MlpModel| m.loss_and_grad(&xb, &yb).0;
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    for (i, grad) in grads.iter().enumerate() {
        for k in 0..model.layers[i].weights.len() {
            let orig = probe.layers[i].weights[k];
            probe.layers[i].weights[k] = orig + eps;
            let up = loss(&probe);
            probe.layers[i].weights[k] = orig - eps;
            let down = loss(&probe);
            probe.layers[i].weights[k] = orig;
            worst = worst.max(rel(grad.weights[k], (up - down) / (2.0 * eps)));
        }
        for k in 0..model.layers[i].bias.len() {
            let orig = probe.layers[i].bias[k];
            probe.layers[i].bias[k] = orig + eps;
            let up = loss(&probe);
            probe.layers[i].bias[k] = orig - eps;
            let down = loss(&probe);
            probe.layers[i].bias[k] = orig;
            worst = worst.max(rel(grad.bias[k], (up - down) / (2.0 * eps)));
        }
    }
    worst
}

/// Analytic gradients of the single-sample RMSE (exposed for diagnostics).
pub fn sample_gradients(model: &MlpModel, x: &DVector<f64>, y: &DVector<f64>) -> Vec<Layer> {
    let xb = DMatrix::from_column_slice(x.len(), 1, model.input_norm.apply(x).as_slice());
    let yb = DMatrix::from_column_slice(y.len(), 1, model.output_norm.apply(y).as_slice());
    model.loss_and_grad(&xb, &yb).1
}
