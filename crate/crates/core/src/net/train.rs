use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, NetworkParams};
use super::model::{argmax, batch_gradient, GradMode, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::rng;
use crate::siggen::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimiser {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch (1 keeps it constant).
    pub lr_decay: f64,
    pub optimiser: Optimiser,
    pub weight_decay: f64,
    pub dropout_p: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            optimiser: Optimiser::Adam,
            weight_decay: 0.0,
            dropout_p: 0.2,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: NetworkParams,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
}

enum OptState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptState {
    fn new(kind: Optimiser, n: usize) -> Self {
        match kind {
            Optimiser::SgdMomentum => OptState::Sgd { velocity: vec![0.0; n] },
            Optimiser::Adam => OptState::Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 },
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptState::Sgd { velocity } => {
                for ((w, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = 0.9 * *v + g;
                    *w -= lr * *v;
                }
            }
            OptState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for i in 0..theta.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Fraction of labelled records whose eval-mode argmax matches the label.
pub fn accuracy(params: &NetworkParams, records: &[Waveform]) -> f64 {
    let labelled: Vec<&Waveform> = records.iter().filter(|w| w.class.is_some()).collect();
    if labelled.is_empty() {
        return 0.0;
    }
    let hits: usize = labelled
        .par_iter()
        .map(|w| usize::from(argmax(&params.probs(&w.x, None)) == w.label().expect("filtered")))
        .sum();
    hits as f64 / labelled.len() as f64
}

/// Minibatch training with early stopping on validation accuracy.
///
/// Deterministic given `config.seed`: initialisation, shuffling and dropout
/// each draw from their own child stream.
pub fn train(
    arch: &ArchConfig,
    train_set: &[Waveform],
    val_set: &[Waveform],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    arch.validate()?;
    config.validate()?;
    let data: Vec<(&[f64], usize)> =
        train_set.iter().filter_map(|w| w.class.map(|c| (w.x.as_slice(), c.index()))).collect();
    if data.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut params = NetworkParams::init(arch, &mut rng::child(config.seed, &[0]));
    let mut shuffle_rng = rng::child(config.seed, &[1]);
    let mut dropout_rng = rng::child(config.seed, &[2]);
    let mut opt = OptState::new(config.optimiser, params.param_count());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());

    let mut lr = config.learning_rate;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data[i].0).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data[i].1).collect();
            let mode = GradMode::Train { dropout_p: config.dropout_p, rng: &mut dropout_rng };
            let mut out = batch_gradient(&params, &xs, &ys, mode)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { seed: config.seed, epoch, loss: out.loss });
            }
            loss_sum += out.loss * chunk.len() as f64;
            if config.weight_decay > 0.0 {
                for (g, w) in out.grad.iter_mut().zip(&params.theta) {
                    *g += config.weight_decay * w;
                }
            }
            opt.step(&mut params.theta, &out.grad, lr);
            if let Some(stats) = out.bn_stats {
                for (layer, (mean, var)) in stats.iter().enumerate() {
                    let rm = &mut params.running.mean[layer];
                    let rv = &mut params.running.var[layer];
                    for i in 0..mean.len() {
                        rm[i] = (1.0 - BN_MOMENTUM) * rm[i] + BN_MOMENTUM * mean[i];
                        rv[i] = (1.0 - BN_MOMENTUM) * rv[i] + BN_MOMENTUM * var[i];
                    }
                }
            }
        }
        lr *= config.lr_decay;
        let train_loss = loss_sum / data.len() as f64;
        let val_acc = if val_set.is_empty() { f64::NAN } else { accuracy(&params, val_set) };
        log::info!("seed {} epoch {epoch}: loss {train_loss:.5} val_acc {val_acc:.4}", config.seed);
        curve.push(CurvePoint { epoch, train_loss, val_acc });
        if val_set.is_empty() || val_acc > best.0 {
            best = (val_acc, epoch, params.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best;
    Ok(TrainOutcome { params, curve, best_epoch })
}

/// Writes the training curve as `epoch,train_loss,val_acc`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_acc\n");
    for p in curve {
        out.push_str(&format!("{},{:.8},{:.6}\n", p.epoch, p.train_loss, p.val_acc));
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(|e| Error::io(path, e))
}
