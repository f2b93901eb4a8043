//! Mini-batch SGD with momentum, L2 penalty, dropout, a step learning-rate
//! schedule and early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{
    conv_backward, conv_forward, fc_backward, fc_forward, maxpool_forward, Activation,
};
use super::layer::LayerSpec;
use super::network::NetworkModel;
use super::ModelError;

/// Labelled fixed-length segments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub class_count: usize,
    pub segments: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(class_count: usize) -> Self {
        Self {
            class_count,
            ..Default::default()
        }
    }

    pub fn push(&mut self, segment: Vec<f64>, label: usize) {
        self.segments.push(segment);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            class_count: self.class_count,
            segments: indices.iter().map(|&i| self.segments[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Shuffled split into train/validation/test parts.
    pub fn split(&self, train: f64, val: f64, seed: u64) -> DataSplits {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (self.len() as f64 * train).round() as usize;
        let n_val = ((self.len() as f64 * val).round() as usize).min(self.len() - n_train);
        DataSplits {
            train: self.subset(&idx[..n_train]),
            val: self.subset(&idx[n_train..n_train + n_val]),
            test: self.subset(&idx[n_train + n_val..]),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Keeps the first `m` segments of every class, `m` being the smallest
    /// non-empty class count. Order is preserved.
    pub fn balanced(&self) -> Dataset {
        let cap = self
            .class_counts()
            .into_iter()
            .filter(|&c| c > 0)
            .min()
            .unwrap_or(0);
        let mut seen = vec![0usize; self.class_count];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.labels[i];
                seen[l] += 1;
                seen[l] <= cap
            })
            .collect();
        self.subset(&keep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Multiplier applied every `lr_period_epochs`.
    pub lr_factor: f64,
    pub lr_period_epochs: usize,
    pub momentum: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// L2 coefficient λ; the penalty is `λ / (2·n_train) · Σ w²` over weights.
    pub l2: f64,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.01,
            lr_factor: 0.1,
            lr_period_epochs: 5,
            momentum: 0.9,
            max_epochs: 200,
            batch_size: 256,
            l2: 1.8,
            early_stop_patience: 6,
            dropout_rate: 0.5,
            rng_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = self.initial_lr > 0.0
            && self.lr_factor > 0.0
            && self.lr_period_epochs > 0
            && self.max_epochs > 0
            && self.batch_size > 0
            && self.early_stop_patience >= 1;
        let ranges = (0.0..1.0).contains(&self.momentum)
            && self.l2 >= 0.0
            && (0.0..1.0).contains(&self.dropout_rate);
        if positive && ranges {
            Ok(())
        } else {
            Err(ModelError::Config(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch.max(1) - 1) / self.lr_period_epochs;
        self.initial_lr * self.lr_factor.powi(steps as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Per-layer `(weight, bias)` gradients; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    l.spec
                        .params()
                        .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                })
                .collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.iter_mut().for_each(|v| *v *= s);
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

enum Aux {
    None,
    Pool(Vec<usize>),
    Mask(Vec<f64>),
}

/// Dropout masks are drawn from `rng` when given; otherwise dropout is inert.
fn forward_cached(
    model: &NetworkModel,
    input: &[f64],
    mut rng: Option<&mut ChaCha8Rng>,
    dropout_override: Option<f64>,
) -> (Vec<Activation>, Vec<Aux>) {
    let mut xs = vec![Activation::signal(input)];
    let mut aux = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let x = xs.last().expect("nonempty");
        let (y, a) = match &layer.spec {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => (conv_forward(p, x), Aux::None),
            LayerSpec::FullyConnected(p) => (fc_forward(p, x), Aux::None),
            LayerSpec::ReLU => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                (y, Aux::None)
            }
            LayerSpec::MaxPool1D { pool, stride } => {
                let (y, arg) = maxpool_forward(x, *pool, *stride);
                (y, Aux::Pool(arg))
            }
            LayerSpec::Dropout { rate } => {
                let rate = dropout_override.unwrap_or(*rate);
                match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..x.data.len())
                            .map(|_| if r.random::<f64>() < rate { 0.0 } else { keep })
                            .collect();
                        let mut y = x.clone();
                        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        (y, Aux::Mask(mask))
                    }
                    _ => (x.clone(), Aux::None),
                }
            }
        };
        xs.push(y);
        aux.push(a);
    }
    (xs, aux)
}

fn softmax_ce(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[label] / sum).ln();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Backpropagates one sample, accumulating into `grads`. Returns
/// `(cross-entropy loss, correct)`.
fn backprop_sample(
    model: &NetworkModel,
    input: &[f64],
    label: usize,
    rng: Option<&mut ChaCha8Rng>,
    dropout_override: Option<f64>,
    grads: &mut Gradients,
) -> (f64, bool) {
    let (xs, aux) = forward_cached(model, input, rng, dropout_override);
    let scores = &xs.last().expect("output").data;
    let correct = super::forward::argmax(scores) == label;
    let (loss, g) = softmax_ce(scores, label);
    let mut dy = Activation::new(scores.len(), 1, g);
    for i in (0..model.layers.len()).rev() {
        let x = &xs[i];
        let y = &xs[i + 1];
        dy = match (&model.layers[i].spec, &aux[i]) {
            (LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p), _) => {
                let (gw, gb) = grads.layers[i].as_mut().expect("param grads");
                conv_backward(p, x, &dy, gw, gb)
            }
            (LayerSpec::FullyConnected(p), _) => {
                let (gw, gb) = grads.layers[i].as_mut().expect("param grads");
                fc_backward(p, x, &dy, gw, gb)
            }
            (LayerSpec::ReLU, _) => {
                let mut d = dy;
                d.data.iter_mut().zip(&y.data).for_each(|(g, out)| {
                    if *out <= 0.0 {
                        *g = 0.0
                    }
                });
                Activation::new(x.channels, x.len, d.data)
            }
            (LayerSpec::MaxPool1D { .. }, Aux::Pool(arg)) => {
                let mut d = vec![0.0; x.data.len()];
                for (g, &src) in dy.data.iter().zip(arg) {
                    d[src] += g;
                }
                Activation::new(x.channels, x.len, d)
            }
            (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => {
                let mut d = dy;
                d.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                d
            }
            _ => dy,
        };
        if i == 0 {
            break;
        }
    }
    (loss, correct)
}

fn l2_penalty(model: &NetworkModel, coeff: f64) -> f64 {
    model
        .layers
        .iter()
        .filter_map(|l| l.spec.params())
        .map(|(w, _)| w.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        * coeff
        / 2.0
}

/// Objective `mean CE + λ/(2·n_train)·Σw²` over a batch (dropout inert) and
/// its gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &NetworkModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    l2: f64,
    n_train: usize,
) -> Result<(f64, Gradients), ModelError> {
    model.check_shapes()?;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        loss += backprop_sample(model, x, y, None, None, &mut grads).0;
    }
    let n = inputs.len().max(1) as f64;
    grads.scale(1.0 / n);
    let coeff = l2 / n_train.max(1) as f64;
    add_l2(model, &mut grads, coeff);
    Ok((loss / n + l2_penalty(model, coeff), grads))
}

fn add_l2(model: &NetworkModel, grads: &mut Gradients, coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    for (layer, g) in model.layers.iter().zip(grads.layers.iter_mut()) {
        if let (Some((w, _)), Some((gw, _))) = (layer.spec.params(), g.as_mut()) {
            gw.iter_mut().zip(w).for_each(|(gv, wv)| *gv += coeff * wv);
        }
    }
}

/// Mean cross-entropy and accuracy in inference mode.
pub fn loss_and_accuracy(model: &NetworkModel, data: &Dataset) -> Result<(f64, f64), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in data.segments.iter().zip(&data.labels) {
        let scores = model.forward(x)?;
        loss += softmax_ce(&scores, y).0;
        correct += (super::forward::argmax(&scores) == y) as usize;
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Fraction of segments classified correctly.
pub fn evaluate(model: &NetworkModel, data: &Dataset) -> Result<f64, ModelError> {
    let cm = confusion_matrix(model, data)?;
    let correct: usize = (0..cm.len()).map(|i| cm[i][i]).sum();
    Ok(correct as f64 / data.len() as f64)
}

/// `cm[true][predicted]` counts.
pub fn confusion_matrix(
    model: &NetworkModel,
    data: &Dataset,
) -> Result<Vec<Vec<usize>>, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let k = model.class_count.max(data.class_count);
    let mut cm = vec![vec![0usize; k]; k];
    for (x, &y) in data.segments.iter().zip(&data.labels) {
        if y >= k {
            return Err(ModelError::Label {
                label: y,
                classes: k,
            });
        }
        cm[y][model.classify(x)?] += 1;
    }
    Ok(cm)
}

/// Trains a copy of `model`, returning the weights of the epoch with the
/// lowest validation loss and the per-epoch history.
pub fn train(
    model: &NetworkModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(NetworkModel, TrainHistory), ModelError> {
    cfg.validate()?;
    model.check_shapes()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(&bad) = train_set.labels.iter().find(|&&l| l >= model.class_count) {
        return Err(ModelError::Label {
            label: bad,
            classes: model.class_count,
        });
    }
    let mut model = model.clone();
    model.quant = None;
    let mut velocity = Gradients::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n_train = train_set.len();
    let coeff = cfg.l2 / n_train as f64;

    let (mut best_loss, _) = loss_and_accuracy(&model, val_set)?;
    let mut best = model.clone();
    let mut history = TrainHistory::default();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model);
            for &i in batch {
                let (l, ok) = backprop_sample(
                    &model,
                    &train_set.segments[i],
                    train_set.labels[i],
                    Some(&mut rng),
                    Some(cfg.dropout_rate),
                    &mut grads,
                );
                loss_sum += l;
                correct += ok as usize;
            }
            if !loss_sum.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: b });
            }
            grads.scale(1.0 / batch.len() as f64);
            add_l2(&model, &mut grads, coeff);
            for ((layer, g), v) in model
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(velocity.layers.iter_mut())
            {
                let (Some((w, bias)), Some((gw, gb)), Some((vw, vb))) =
                    (layer.spec.params_mut(), g.as_ref(), v.as_mut())
                else {
                    continue;
                };
                for ((p, g), v) in w.iter_mut().zip(gw).zip(vw.iter_mut()) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
                for ((p, g), v) in bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
            }
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, batch: 0 });
        }
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n_train as f64,
            train_accuracy: correct as f64 / n_train as f64,
            val_loss,
            val_accuracy,
        });
        log::debug!("epoch {epoch}: lr {lr:.2e} val loss {val_loss:.4} acc {val_accuracy:.4}");
        if val_loss < best_loss {
            best_loss = val_loss;
            best = model.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if history.best_epoch == 0 {
        best = model;
    }
    Ok((best, history))
}
