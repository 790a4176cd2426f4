//! Mini-batch Adam training and finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::network::{forward_loss, loss_and_gradients};
use super::params::{ModelParams, ParamGroup};
use super::tensor::Tensor;
use crate::context::TrainingExample;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-example loss over the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Target tokens scored as `<unk>` during the last epoch.
    pub unknown_targets: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Adam moment estimates for every parameter tensor.
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Tensor], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let groups = params.groups().to_vec();
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let lr = match groups[i] {
                ParamGroup::Bottom => cfg.lr_bottom,
                ParamGroup::Other => cfg.lr_other,
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, (w, g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Trains `params` in place. `on_epoch` runs after every epoch (for
/// checkpoints and logging); returning `Ok(false)` stops training early.
pub fn train<F>(
    params: &mut ModelParams,
    data: &[TrainingExample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(&EpochLog, &ModelParams) -> Result<bool>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut unknown = 0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.gen()).collect();
            let frozen: &ModelParams = params;
            let results = chunk
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| {
                    loss_and_gradients(frozen, &data[i], Some(ChaCha8Rng::seed_from_u64(seed)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for (out, g) in &results {
                batch_loss += out.loss;
                unknown += out.unknown_targets;
                for (acc, x) in grads.iter_mut().zip(g) {
                    acc.add_assign(x);
                }
            }
            if !batch_loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
                return Err(Error::NanLoss { epoch, batch });
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_assign(scale));
            adam.update(params, &grads, cfg);
            epoch_loss += batch_loss;
        }
        let log = EpochLog {
            epoch,
            loss: epoch_loss / data.len() as f64,
        };
        report.unknown_targets = unknown;
        report.epochs.push(log.clone());
        if !on_epoch(&log, params)? {
            break;
        }
    }
    Ok(report)
}

/// Result of comparing analytic and numerical gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// Largest per-tensor relative error, `relative_error` applied to the
    /// Euclidean norms of the analytic gradient, the numerical gradient and
    /// their difference.
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Largest per-scalar relative error. Coordinates whose true gradient
    /// is below roughly 1e-7 are dominated by rounding in the difference
    /// quotient, so this can exceed `max_rel_error` by orders of magnitude.
    pub max_elem_rel_error: f64,
    pub worst_elem_param: String,
    pub worst_elem_index: usize,
    pub n_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of the loss on `ex` with central
/// differences for every scalar parameter.
pub fn grad_check(params: &ModelParams, ex: &TrainingExample, eps: f64) -> Result<GradCheck> {
    grad_check_with(params, ex, eps, None)
}

/// Central-difference gradient of the loss on `ex`.
pub fn numerical_gradient(
    params: &ModelParams,
    ex: &TrainingExample,
    eps: f64,
) -> Result<Vec<Tensor>> {
    let coords: Vec<(usize, usize)> = params
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
        .collect();
    let values = coords
        .par_iter()
        .map_init(
            || params.clone(),
            |p, &(i, k)| -> Result<f64> {
                let orig = p.tensors()[i].data()[k];
                p.tensors_mut()[i].data_mut()[k] = orig + eps;
                let plus = forward_loss(p, ex)?.loss;
                p.tensors_mut()[i].data_mut()[k] = orig - eps;
                let minus = forward_loss(p, ex)?.loss;
                p.tensors_mut()[i].data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                if !numeric.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "numerical gradient of {}",
                        params.names()[i]
                    )));
                }
                Ok(numeric)
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    let mut out = params.zeros_like();
    for (&(i, k), v) in coords.iter().zip(values) {
        out[i].data_mut()[k] = v;
    }
    Ok(out)
}

/// As [`grad_check`], adding `delta` to the analytic gradient of scalar
/// `index` of the named tensor first (used to test the checker itself).
pub fn grad_check_with(
    params: &ModelParams,
    ex: &TrainingExample,
    eps: f64,
    corrupt: Option<(&str, usize, f64)>,
) -> Result<GradCheck> {
    let (_, mut grads) = loss_and_gradients(params, ex, None)?;
    if !grads.iter().all(Tensor::is_finite) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    if let Some((name, index, delta)) = corrupt {
        let i = params
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("no parameter '{name}'")))?;
        grads[i].data_mut()[index] += delta;
    }
    let numeric = numerical_gradient(params, ex, eps)?;
    let norm = |xs: &mut dyn Iterator<Item = f64>| xs.map(|x| x * x).sum::<f64>().sqrt();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: params.names()[0].clone(),
        max_elem_rel_error: 0.0,
        worst_elem_param: params.names()[0].clone(),
        worst_elem_index: 0,
        n_checked: 0,
    };
    for (i, (ga, gn)) in grads.iter().zip(&numeric).enumerate() {
        let diff = norm(&mut ga.data().iter().zip(gn.data()).map(|(a, n)| a - n));
        let scale = norm(&mut ga.data().iter().copied())
            .max(norm(&mut gn.data().iter().copied()))
            .max(1e-8);
        let err = diff / scale;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = params.names()[i].clone();
        }
        for (k, (a, n)) in ga.data().iter().zip(gn.data()).enumerate() {
            let e = relative_error(*a, *n);
            if e > report.max_elem_rel_error {
                report.max_elem_rel_error = e;
                report.worst_elem_param = params.names()[i].clone();
                report.worst_elem_index = k;
            }
        }
        report.n_checked += ga.len();
    }
    Ok(report)
}
