//! Full-batch training with Adam, decoupled weight decay, and validation-accuracy early stopping.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{stream, Graph, Split};
use crate::nn::{accuracy, predictions, EigWarmStart, GraphIndex, Model, ModelSpec, ParamStore, Variant};
use crate::tensor::{Tape, Tensor};

const STREAM_INIT: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Record wall-clock durations in outputs (makes them run-dependent).
    pub record_wall_time: bool,
    /// Keep per-epoch curves in run metrics.
    pub record_curves: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 200,
            patience: 100,
            seeds: vec![42, 43, 44, 45, 46],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            record_wall_time: false,
            record_curves: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam moments need β₁, β₂ ∈ [0, 1) and ε > 0".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One Adam update with bias correction. Weight decay is applied to the
/// parameters directly (`p ← p − lr·wd·p`) before the moment update.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("adam_step", format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (name, (p, g)) in params.names.iter().zip(params.tensors.iter().zip(grads)) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{name}: {:?} vs {:?}", p.shape(), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { name: name.clone() });
        }
    }
    if state.m.is_empty() {
        state.m = params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (k, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *x *= decay;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *x -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub model: Variant,
    pub seed: u64,
    pub label_rate: f64,
    pub epochs_run: usize,
    pub best_val_epoch: usize,
    pub best_val_acc: f64,
    pub test_accuracy: f64,
    pub wall_time_s: Option<f64>,
    pub curves: Vec<EpochRecord>,
}

/// Mean cross-entropy of `rows` computed directly from logits.
fn cross_entropy_value(logits: &Tensor, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for &r in rows {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[r]];
    }
    total / rows.len() as f64
}

/// Trains one model; returns metrics and the best-validation parameters.
///
/// Each epoch's accuracies are measured on the logits of that epoch's training
/// forward pass, i.e. for the parameters before the epoch's update.
pub fn train(spec: &ModelSpec, graph: &Graph, split: &Split, cfg: &TrainConfig, seed: u64) -> Result<(RunMetrics, Model)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyMask);
    }
    let started = Instant::now();
    let mut model = Model::init(spec.clone(), &mut stream(seed, STREAM_INIT))?;
    model.check_graph(graph)?;
    let index = GraphIndex::new(graph)?;
    let warm = EigWarmStart::for_model(&model);
    let mut state = AdamState::default();
    let mut best = (f64::NEG_INFINITY, 0usize, 0.0);
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;
    let mut curves = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch },
            other => other,
        };
        let mut tape = Tape::new();
        let fwd = model.forward_with(&mut tape, &graph.features, &index, Some(&warm)).map_err(diverged)?;
        let loss = model.loss(&mut tape, &fwd, &graph.labels, &split.train, &index).map_err(diverged)?;
        let loss_value = tape.value(loss).item();
        let logits = tape.value(fwd.logits);
        let pred = predictions(logits);
        let val_acc = accuracy(&pred, &graph.labels, &split.val);
        epochs_run = epoch + 1;
        if cfg.record_curves {
            curves.push(EpochRecord {
                epoch,
                train_loss: loss_value,
                val_loss: cross_entropy_value(logits, &graph.labels, &split.val),
                train_acc: accuracy(&pred, &graph.labels, &split.train),
                val_acc,
            });
        }
        if val_acc > best.0 {
            best = (val_acc, epoch, accuracy(&pred, &graph.labels, &split.test));
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = fwd.params.iter().map(|&v| grads.take(v)).collect();
        adam_step(&mut model.params, &grads, &mut state, cfg)?;
    }
    model.params = best_params;
    let metrics = RunMetrics {
        model: spec.variant,
        seed,
        label_rate: split.label_rate,
        epochs_run,
        best_val_epoch: best.1,
        best_val_acc: best.0,
        test_accuracy: best.2,
        wall_time_s: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        curves,
    };
    Ok((metrics, model))
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("no completed runs to aggregate".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Summary { count: v.len(), median: quantile(&v, 0.5), q25: quantile(&v, 0.25), q75: quantile(&v, 0.75) })
}
