use std::path::Path;

use anyhow::{Context, Result};
use ddmpc::mlp::{gradient_check, split_indices, train, MlpModel, TrainConfig, TrainReport};
use ddmpc::plants::held_excitation;
use ddmpc::trajectory::record_episode;
use nalgebra::{DMatrix, DVector};

use super::{sub_seed, write_rows};
use crate::config::ExperimentConfig;
use crate::metrics::MetricsReport;
use crate::sim;

/// Motor angles (integrated velocity commands) and measured joint angles
/// from one excitation episode, rows are samples.
pub fn motor_angle_data(cfg: &ExperimentConfig, samples: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = &cfg.plant;
    let u = held_excitation(
        samples,
        p.motors(),
        cfg.data.amplitude,
        (cfg.data.hold_min, cfg.data.hold_max),
        cfg.data.reversion,
        p.max_velocity,
        p.dt,
        seed,
    );
    let mut plant = sim::surrogate(p, p.load)?;
    let traj = record_episode(&mut plant, &u, seed.wrapping_add(1))?;
    let mut theta = DMatrix::zeros(samples, p.motors());
    let mut acc = DVector::<f64>::zeros(p.motors());
    for t in 0..samples {
        acc.axpy(p.dt, &u.row(t).transpose(), 1.0);
        theta.row_mut(t).copy_from(&acc.transpose());
    }
    Ok((theta, traj.outputs().clone()))
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let m = &cfg.mlp;
    TrainConfig {
        lr: m.lr,
        batch: m.batch,
        epochs: m.epochs,
        hidden: m.hidden,
        hidden_layers: m.hidden_layers,
        seed,
        split: (m.split[0], m.split[1], m.split[2]),
    }
}

pub struct TrainedModels {
    /// Motor angles to joint angles.
    pub forward: MlpModel,
    pub forward_report: TrainReport,
    /// Joint angles to motor angles.
    pub inverse: MlpModel,
    pub inverse_report: TrainReport,
}

pub fn train_models(cfg: &ExperimentConfig, seed: u64) -> Result<TrainedModels> {
    let (theta, beta) = motor_angle_data(cfg, cfg.mlp.samples, sub_seed(seed, 20))?;
    let tc = train_config(cfg, cfg.mlp.split_seed);
    let (forward, forward_report) = train(&theta, &beta, &tc).context("training forward model")?;
    let (inverse, inverse_report) = train(&beta, &theta, &tc).context("training inverse model")?;
    Ok(TrainedModels {
        forward,
        forward_report,
        inverse,
        inverse_report,
    })
}

/// The inverse model named in the config, or a freshly trained one.
pub(crate) fn inverse_model(cfg: &ExperimentConfig, seed: u64) -> Result<MlpModel> {
    match &cfg.mlp.inverse_model {
        Some(path) => Ok(MlpModel::load(path).with_context(|| format!("loading {}", path.display()))?),
        None => Ok(train_models(cfg, seed)?.inverse),
    }
}

fn curve_rows(r: &TrainReport) -> Vec<Vec<f64>> {
    (0..r.val_rmse.len())
        .map(|e| {
            let loss = if e == 0 { f64::NAN } else { r.train_loss[e - 1] };
            vec![e as f64, loss, r.val_rmse[e]]
        })
        .collect()
}

/// Trains the forward (motor -> joint) and inverse (joint -> motor) models.
pub fn train_mlp(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<MetricsReport> {
    let models = train_models(cfg, seed)?;
    models.forward.save(out.join("forward.mlp"))?;
    models.inverse.save(out.join("inverse.mlp"))?;
    let mut report = MetricsReport::new("train-mlp");
    for (name, r) in [("forward", &models.forward_report), ("inverse", &models.inverse_report)] {
        write_rows(&out.join(format!("{name}_curve.csv")), "epoch,train_loss,val_rmse", curve_rows(r))?;
        let best = r.val_rmse[r.best_epoch];
        report.value(format!("{name}_val_rmse_initial"), r.val_rmse[0]);
        report.value(format!("{name}_val_rmse_best"), best);
        report.value(format!("{name}_best_epoch"), r.best_epoch as f64);
        report.value(format!("{name}_test_rmse_deg"), r.test_rmse);
        report.check(
            format!("{name} validation reduction"),
            best <= 0.5 * r.val_rmse[0],
            format!("val RMSE {:.4} -> {best:.4} (normalised)", r.val_rmse[0]),
        );
    }
    let split = (cfg.mlp.split[0], cfg.mlp.split[1], cfg.mlp.split[2]);
    let a = split_indices(cfg.mlp.samples, split, cfg.mlp.split_seed);
    let b = split_indices(cfg.mlp.samples, split, cfg.mlp.split_seed);
    report.check(
        "split reproducible",
        a == b && a == models.forward_report.split,
        format!("seed {} split of {} samples", cfg.mlp.split_seed, cfg.mlp.samples),
    );
    // Gradient check on a desk-scale network and a real sample.
    let (theta, beta) = motor_angle_data(cfg, 16, sub_seed(seed, 21))?;
    let desk = TrainConfig::desk_scale();
    let probe = MlpModel::init(theta.ncols(), beta.ncols(), desk.hidden, desk.hidden_layers, sub_seed(seed, 22));
    let worst = (0..4)
        .map(|r| {
            let x = theta.row(r).transpose() / 50.0;
            let y = beta.row(r).transpose() / 50.0;
            gradient_check(&probe, &x, &y, 1e-5)
        })
        .fold(0.0, f64::max);
    report.value("gradient_check_max_rel_error", worst);
    report.check("gradient check", worst <= 1e-4, format!("max relative error {worst:.2e}"));
    Ok(report)
}
