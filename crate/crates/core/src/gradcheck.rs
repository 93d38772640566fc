//! Central-difference verification of the analytic gradients.

use serde::Serialize;

use crate::autodiff::Graph;
use crate::data::Batch;
use crate::error::Result;
use crate::model::DyMixOp;
use crate::training::{compute_loss, LossWeights, Metric};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub id: String,
    pub scalars: usize,
    /// `|a - n|_inf / max(|a|_inf, |n|_inf, 1e-12)`.
    pub rel_err: f64,
    pub analytic_max: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }
}

fn loss_value(model: &DyMixOp<f64>, batch: &Batch<f64>, weights: LossWeights, metric: Metric) -> Result<f64> {
    let mut g = Graph::inference();
    let w = g.input(batch.window.clone());
    let t = g.input(batch.target.clone());
    let l = g.input(batch.last.clone());
    let loss = compute_loss(&mut g, model, w, t, l, weights, metric)?;
    Ok(g.value(loss).item())
}

/// Compares the analytic gradient of the training loss on `batch` with
/// central differences, step `1e-5 (1 + |theta|)`, for every scalar of every
/// trainable parameter. A parameter passes when its error is strictly below
/// `tolerance`.
pub fn grad_check(
    model: &DyMixOp<f64>,
    batch: &Batch<f64>,
    weights: LossWeights,
    metric: Metric,
    tolerance: f64,
) -> Result<GradReport> {
    let mut work = model.clone();
    work.params_mut().zero_grad();
    let mut g = Graph::new();
    let w = g.input(batch.window.clone());
    let t = g.input(batch.target.clone());
    let l = g.input(batch.last.clone());
    let loss = compute_loss(&mut g, &work, w, t, l, weights, metric)?;
    g.backward(loss, work.params_mut())?;
    drop(g);

    let ids: Vec<String> = work.params().iter().filter(|p| p.trainable).map(|p| p.id.clone()).collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = work.params().get(&id)?.grad.data().to_vec();
        let original = work.params().get(&id)?.value.clone();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..original.data().len() {
            let theta = original.data()[i];
            let h = 1e-5 * (1.0 + theta.abs());
            let mut probe = |x: f64| -> Result<f64> {
                let mut v = original.clone();
                v.data_mut()[i] = x;
                work.params_mut().set_value(&id, v)?;
                loss_value(&work, batch, weights, metric)
            };
            let up = probe(theta + h)?;
            let down = probe(theta - h)?;
            numeric.push((up - down) / (2.0 * h));
        }
        work.params_mut().set_value(&id, original)?;
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = inf(&analytic).max(inf(&numeric)).max(1e-12);
        let rel_err = inf(&diff) / scale;
        params.push(ParamCheck {
            id,
            scalars: analytic.len(),
            rel_err,
            analytic_max: inf(&analytic),
            passed: rel_err < tolerance,
        });
    }
    Ok(GradReport { tolerance, params })
}
