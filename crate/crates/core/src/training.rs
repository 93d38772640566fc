//! Loss assembly, AdamW, the step learning-rate schedule, the epoch loop,
//! evaluation and autoregressive rollout.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::data::{NormStats, Windows};
use crate::error::{Error, Result};
use crate::model::DyMixOp;
use crate::real::Real;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Invalid(format!(
                "loss weights need alpha, beta >= 0 and alpha + beta > 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    RelativeMse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::RelativeMse => "relative_mse",
        }
    }

    fn record<T: Real>(self, g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
        match self {
            Metric::Mse => g.mse(pred, target),
            Metric::RelativeMse => g.relative_mse(pred, target),
        }
    }

    /// The metric on plain tensors.
    pub fn eval<T: Real>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::inference();
        let (p, t) = (g.input(pred.clone()), g.input(target.clone()));
        let v = self.record(&mut g, p, t)?;
        Ok(g.value(v).item().as_f64())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "relative_mse" | "relative-mse" => Ok(Metric::RelativeMse),
            _ => Err(Error::Invalid(format!("unknown metric `{s}`"))),
        }
    }
}

/// `alpha * metric(prediction, target) + beta * metric(consistency, last)`.
/// A term whose weight is zero is not recorded at all.
pub fn compute_loss<T: Real>(
    g: &mut Graph<T>,
    model: &DyMixOp<T>,
    window: Var,
    target: Var,
    last: Var,
    weights: LossWeights,
    metric: Metric,
) -> Result<Var> {
    weights.validate()?;
    let c0 = model.encode(g, window)?;
    let mut terms = Vec::new();
    if weights.alpha > 0.0 {
        let c = model.stack(g, c0)?;
        let pred = model.decode(g, c)?;
        let m = metric.record(g, pred, target)?;
        terms.push(g.scale(m, T::of(weights.alpha)));
    }
    if weights.beta > 0.0 {
        let cons = model.decode(g, c0)?;
        let m = metric.record(g, cons, last)?;
        terms.push(g.scale(m, T::of(weights.beta)));
    }
    match terms[..] {
        [a] => Ok(a),
        [a, b] => g.add(a, b),
        _ => unreachable!(),
    }
}

/// Decoupled-weight-decay Adam with a step schedule on the epoch index.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub lr0: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub step: u64,
    /// First and second moments, in parameter-store order.
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, weight_decay: f64, gamma: f64, step_size: usize) -> Result<Self> {
        if !(lr > 0.0) || step_size == 0 || !(gamma > 0.0) || weight_decay < 0.0 {
            return Err(Error::Invalid(format!(
                "optimizer needs lr > 0, gamma > 0, step_size >= 1, weight_decay >= 0 (got {lr}, {gamma}, {step_size}, {weight_decay})"
            )));
        }
        Ok(AdamW {
            lr0: lr,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            gamma,
            step_size,
            step: 0,
            m: params.iter().map(|p| p.value.zeros_like()).collect(),
            v: params.iter().map(|p| p.value.zeros_like()).collect(),
        })
    }

    /// `lr0 * gamma^floor(epoch / step_size)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powi((epoch / self.step_size) as i32)
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.lr_at(epoch);
    }

    /// One update from the gradients held in `params`. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Invalid("optimizer state does not match the parameter set".into()));
        }
        if let Some(p) = params.iter().find(|p| p.trainable && !p.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(p.id.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let decay = T::one() - T::of(self.lr * self.weight_decay);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data();
            let (ms, vs) = (m.data_mut(), v.data_mut());
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i];
                ms[i] = b1 * ms[i] + (T::one() - b1) * g;
                vs[i] = b2 * vs[i] + (T::one() - b2) * g * g;
                *x = *x * decay - lr * (ms[i] / bc1) / ((vs[i] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossWeights,
    pub metric: Metric,
    pub seed: u64,
    /// Evaluate the prediction metric on the training split after every
    /// epoch (recorded as `train_metric`).
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            loss: LossWeights::default(),
            metric: Metric::Mse,
            seed: 0,
            eval_train: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub train_loss: f64,
    /// Prediction metric on the test split after the epoch.
    pub test_loss: Option<f64>,
    /// Prediction metric on the training split after the epoch.
    pub train_metric: Option<f64>,
    pub lr: f64,
}

/// Sample order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(samples: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs epochs `start_epoch .. start_epoch + cfg.epochs`, calling
/// `on_epoch` after each. Resuming from a checkpoint taken after epoch `e`
/// with `start_epoch = e` continues the exact same run.
pub fn train<T: Real>(
    model: &mut DyMixOp<T>,
    opt: &mut AdamW<T>,
    train: &Windows<'_>,
    test: Option<&Windows<'_>>,
    cfg: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochRecord, &DyMixOp<T>, &AdamW<T>) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.loss.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in start_epoch..start_epoch + cfg.epochs {
        opt.set_epoch(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.batch::<T>(chunk);
            let mut g = Graph::new();
            let w = g.input(batch.window);
            let t = g.input(batch.target);
            let l = g.input(batch.last);
            let loss = compute_loss(&mut g, model, w, t, l, cfg.loss, cfg.metric)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Invalid(format!("non-finite loss in epoch {epoch}")));
            }
            total += value * chunk.len() as f64;
            model.params_mut().zero_grad();
            g.backward(loss, model.params_mut())?;
            opt.step(model.params_mut())?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / train.len() as f64,
            test_loss: match test {
                Some(w) if !w.is_empty() => Some(evaluate(model, w, cfg.metric, cfg.batch_size)?),
                _ => None,
            },
            train_metric: if cfg.eval_train {
                Some(evaluate(model, train, cfg.metric, cfg.batch_size)?)
            } else {
                None
            },
            lr: opt.lr,
        };
        on_epoch(&record, model, opt)?;
        history.push(record);
    }
    Ok(history)
}

/// Sample-weighted mean of the one-step prediction metric.
pub fn evaluate<T: Real>(model: &DyMixOp<T>, windows: &Windows<'_>, metric: Metric, batch_size: usize) -> Result<f64> {
    evaluate_with(model, windows, metric, batch_size, None)
}

/// As [`evaluate`], optionally mapping predictions and targets back to
/// physical units first.
pub fn evaluate_with<T: Real>(
    model: &DyMixOp<T>,
    windows: &Windows<'_>,
    metric: Metric,
    batch_size: usize,
    denormalize: Option<&NormStats>,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let idx: Vec<usize> = (0..windows.len()).collect();
    let points = windows.dataset().points();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = windows.batch::<T>(chunk);
        let mut pred = model.predict(&batch.window)?;
        let mut target = batch.target;
        if let Some(stats) = denormalize {
            pred = stats.denormalize_output(&pred, points)?;
            target = stats.denormalize_output(&target, points)?;
        }
        total += metric.eval(&pred, &target)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Autoregressive prediction from one `[C (k+1), N...]` window. Each
/// prediction is appended to the window and the oldest frame dropped.
pub fn rollout<T: Real>(model: &DyMixOp<T>, window: &Tensor<T>, steps: usize) -> Result<Vec<Tensor<T>>> {
    let cfg = model.config();
    if cfg.in_channels != cfg.out_channels {
        return Err(Error::Invalid("rollout needs matching input and output channels".into()));
    }
    if window.shape().first() != Some(&cfg.window_channels()) {
        return Err(Error::shape(
            "rollout window",
            &[cfg.window_channels()],
            window.shape(),
        ));
    }
    let mut shape = vec![1];
    shape.extend(window.shape());
    let mut current = window.clone().reshape(&shape)?;
    let c = cfg.in_channels;
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = model.predict(&current)?;
        frames.push(next.clone().reshape(&next.shape()[1..])?);
        current = if cfg.history == 0 {
            next
        } else {
            let kept = tensor::slice(1, &current, c, cfg.window_channels() - c)?;
            tensor::concat(1, &[&kept, &next])?
        };
    }
    Ok(frames)
}
