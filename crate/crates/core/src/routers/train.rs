//! Losses and the mini-batch SGD loop shared by all gradient-trained routers.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{NetSpec, Workspace};
use super::RouterConfig;
use crate::error::{Error, Result};
use crate::linalg::{mean, sample_sd};
use crate::types::RoutingDataset;
use crate::utility::argmax_pairs;

/// Per-model affine standardization of score and cost targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub score_mean: Vec<f64>,
    pub score_sd: Vec<f64>,
    pub cost_mean: Vec<f64>,
    pub cost_sd: Vec<f64>,
}

impl TargetScaling {
    pub fn fit(train: &RoutingDataset) -> Self {
        let m = train.n_models();
        let mut s = Self {
            score_mean: Vec::with_capacity(m),
            score_sd: Vec::with_capacity(m),
            cost_mean: Vec::with_capacity(m),
            cost_sd: Vec::with_capacity(m),
        };
        for j in 0..m {
            let sc: Vec<f64> = train.records().iter().map(|r| r.outcomes[j].score).collect();
            let co: Vec<f64> = train.records().iter().map(|r| r.outcomes[j].cost).collect();
            let nz = |v: f64| if v > 0.0 { v } else { 1.0 };
            s.score_mean.push(mean(&sc));
            s.score_sd.push(nz(sample_sd(&sc)));
            s.cost_mean.push(mean(&co));
            s.cost_sd.push(nz(sample_sd(&co)));
        }
        s
    }

    /// Maps raw network outputs back to target units, in place.
    pub fn unscale(&self, out: &mut [f64]) {
        let m = self.score_mean.len();
        for j in 0..m {
            out[j] = out[j] * self.score_sd[j] + self.score_mean[j];
            out[m + j] = out[m + j] * self.cost_sd[j] + self.cost_mean[j];
        }
    }

    fn scale(&self, t: &mut [f64]) {
        let m = self.score_mean.len();
        for j in 0..m {
            t[j] = (t[j] - self.score_mean[j]) / self.score_sd[j];
            t[m + j] = (t[m + j] - self.cost_mean[j]) / self.cost_sd[j];
        }
    }
}

/// What the network is fit to.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// `MSE(s_hat, s) + alpha * MSE(c_hat, c)`, averaged over queries and models.
    Utility { alpha: f64 },
    /// Softmax cross-entropy against the per-query optimal model at `lambda`.
    Selection { lambda: f64 },
}

/// Training examples in network-ready form.
pub struct Batchable {
    pub inputs: Vec<Vec<f64>>,
    /// Utility: `2 * n_models` targets per query. Selection: one label.
    pub targets: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batchable {
    pub fn new(ds: &RoutingDataset, objective: &Objective, scaling: Option<&TargetScaling>) -> Result<Self> {
        let mut b = Batchable {
            inputs: Vec::with_capacity(ds.len()),
            targets: Vec::new(),
            labels: Vec::new(),
        };
        for r in ds.records() {
            b.inputs.push(r.embedding.as_slice().to_vec());
            match objective {
                Objective::Utility { .. } => {
                    let mut t: Vec<f64> = r.outcomes.iter().map(|o| o.score).chain(r.outcomes.iter().map(|o| o.cost)).collect();
                    if let Some(s) = scaling {
                        s.scale(&mut t);
                    }
                    b.targets.push(t);
                }
                Objective::Selection { lambda } => {
                    let s: Vec<f64> = r.outcomes.iter().map(|o| o.score).collect();
                    let c: Vec<f64> = r.outcomes.iter().map(|o| o.cost).collect();
                    b.labels.push(argmax_pairs(&s, &c, *lambda)?);
                }
            }
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Loss of one example, with `d_out` set to its gradient scaled by `weight`
/// (the batch-averaging factor).
pub fn example_loss(objective: &Objective, out: &[f64], data: &Batchable, i: usize, weight: f64, d_out: &mut [f64]) -> f64 {
    match objective {
        Objective::Utility { alpha } => {
            let t = &data.targets[i];
            let m = t.len() / 2;
            let mut loss = 0.0;
            for j in 0..m {
                let ds = out[j] - t[j];
                let dc = out[m + j] - t[m + j];
                loss += (ds * ds + alpha * dc * dc) / m as f64;
                d_out[j] = weight * 2.0 * ds / m as f64;
                d_out[m + j] = weight * 2.0 * alpha * dc / m as f64;
            }
            loss
        }
        Objective::Selection { .. } => {
            let y = data.labels[i];
            let mx = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = out.iter().map(|v| libm::exp(v - mx)).sum();
            for (j, d) in d_out.iter_mut().enumerate() {
                let p = libm::exp(out[j] - mx) / z;
                *d = weight * (p - if j == y { 1.0 } else { 0.0 });
            }
            -(out[y] - mx - libm::log(z))
        }
    }
}

/// Mean loss of `params` over the examples in `idx` (all if `None`); if
/// `grad` is given, accumulates the gradient of that mean.
pub fn batch_loss(spec: &NetSpec, params: &[f64], objective: &Objective, data: &Batchable, idx: Option<&[usize]>, mut grad: Option<&mut [f64]>, ws: &mut Workspace) -> f64 {
    let all: Vec<usize>;
    let idx = match idx {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let weight = 1.0 / idx.len() as f64;
    let mut out = vec![0.0; spec.n_outputs()];
    let mut d_out = vec![0.0; spec.n_outputs()];
    let mut total = 0.0;
    for &i in idx {
        spec.forward(params, &data.inputs[i], ws, &mut out);
        total += example_loss(objective, &out, data, i, weight, &mut d_out);
        if let Some(g) = grad.as_deref_mut() {
            spec.backward(params, &data.inputs[i], ws, &d_out, g);
        }
    }
    total * weight
}

/// Record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_train_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub epochs_run: usize,
    /// Epoch (1-based) whose parameters were kept; equals `epochs_run` without validation.
    pub best_epoch: usize,
}

/// Mini-batch SGD with a fixed learning rate. With a validation set, stops
/// after `early_stop_patience` epochs without improvement and returns the
/// best-validation parameters.
pub fn sgd(spec: &NetSpec, train: &Batchable, val: Option<&Batchable>, objective: &Objective, config: &RouterConfig) -> Result<(Vec<f64>, TrainingLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = spec.init_params(&mut rng);
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; params.len()];
    let mut log = TrainingLog {
        initial_train_loss: batch_loss(spec, &params, objective, train, None, None, &mut ws),
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_loss(spec, &params, objective, train, Some(chunk), Some(&mut grad), &mut ws);
            if !loss.is_finite() {
                return Err(Error::Training { epoch, reason: alloc::format!("non-finite loss {loss}") });
            }
            epoch_loss += loss * chunk.len() as f64;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch, reason: "non-finite parameters".into() });
        }
        log.train_losses.push(epoch_loss / train.len() as f64);
        log.epochs_run = epoch;
        if let Some(val) = val.filter(|v| !v.is_empty()) {
            let vl = batch_loss(spec, &params, objective, val, None, None, &mut ws);
            if !vl.is_finite() {
                return Err(Error::Training { epoch, reason: alloc::format!("non-finite validation loss {vl}") });
            }
            log.val_losses.push(vl);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, params.clone()));
                log.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    break;
                }
            }
        } else {
            log.best_epoch = epoch;
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok((params, log))
}
