//! Analytic-vs-finite-difference gradient verification for network routers.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{NetSpec, Workspace};
use super::train::{batch_loss, Batchable, Objective};
use super::{FittedRouter, Formulation, RouterParams};
use crate::error::{bail, Result};
use crate::types::RoutingDataset;

/// Number of parameters compared per check.
pub const CHECKED_PARAMS: usize = 100;
/// Jittered retries allowed when a step crosses a ReLU kink.
pub const MAX_RETRIES: usize = 5;
/// Floor on the relative-error denominator so that gradients at the level of
/// floating-point noise are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;
/// Relative size of the input perturbation applied to examples that hit a kink.
pub const JITTER: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub max_abs_gradient: f64,
    pub params_checked: usize,
    pub retries: usize,
}

fn relu_patterns(spec: &NetSpec, params: &[f64], data: &Batchable, ws: &mut Workspace) -> Vec<Vec<bool>> {
    let mut out = alloc::vec![0.0; spec.n_outputs()];
    data.inputs
        .iter()
        .map(|x| {
            let mut pattern = Vec::new();
            spec.forward(params, x, ws, &mut out);
            spec.relu_pattern(ws, &mut pattern);
            pattern
        })
        .collect()
}

/// Perturbs an input by roughly `JITTER` of its norm.
fn jitter(x: &mut [f64], rng: &mut ChaCha8Rng) {
    let scale = JITTER * crate::linalg::norm(x).max(1.0) / libm::sqrt(x.len() as f64);
    for v in x.iter_mut() {
        *v += scale * rng.random_range(-1.0..1.0);
    }
}

/// Compares analytic parameter gradients of the router's training loss on
/// `batch` to central differences with step `h`, over a seeded subset of
/// [`CHECKED_PARAMS`] parameters.
pub fn gradient_check(router: &FittedRouter, batch: &RoutingDataset, h: f64, seed: u64) -> Result<GradCheckReport> {
    let RouterParams::Network { spec, weights, scaling } = &router.params else {
        bail!(InvalidArgument, "{} router has no gradient-trained parameters", router.arch);
    };
    if !(h > 0.0) {
        bail!(InvalidArgument, "finite-difference step must be positive");
    }
    if batch.dim() != spec.dim() || batch.n_models() != spec.n_models() {
        bail!(InvalidArgument, "batch does not match the router's dimension or catalog");
    }
    let objective = match router.formulation {
        Formulation::Utility => Objective::Utility { alpha: router.config.alpha },
        Formulation::Selection => Objective::Selection {
            lambda: router.selection_lambda.unwrap_or(0.0),
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = (0..weights.len()).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(CHECKED_PARAMS);

    let mut data = Batchable::new(batch, &objective, scaling.as_ref())?;
    let mut ws = Workspace::default();
    let relu = spec.has_relu();
    let mut base_pattern = if relu { relu_patterns(spec, weights, &data, &mut ws) } else { Vec::new() };
    let mut grad = alloc::vec![0.0; weights.len()];
    batch_loss(spec, weights, &objective, &data, None, Some(&mut grad), &mut ws);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        max_abs_gradient: 0.0,
        params_checked: chosen.len(),
        retries: 0,
    };
    let mut p = weights.clone();
    for &i in &chosen {
        let mut attempt = 0;
        let (plus, minus) = loop {
            let orig = p[i];
            p[i] = orig + h;
            let plus = batch_loss(spec, &p, &objective, &data, None, None, &mut ws);
            let pat_plus = if relu { relu_patterns(spec, &p, &data, &mut ws) } else { Vec::new() };
            p[i] = orig - h;
            let minus = batch_loss(spec, &p, &objective, &data, None, None, &mut ws);
            let pat_minus = if relu { relu_patterns(spec, &p, &data, &mut ws) } else { Vec::new() };
            p[i] = orig;
            // examples whose activation pattern changes within the step
            let kinked: Vec<usize> = (0..base_pattern.len())
                .filter(|&e| pat_plus[e] != base_pattern[e] || pat_minus[e] != base_pattern[e])
                .collect();
            if kinked.is_empty() {
                break (plus, minus);
            }
            if attempt == MAX_RETRIES {
                bail!(Numerical, "finite-difference step crossed a ReLU kink at parameter {i} after {MAX_RETRIES} jittered retries");
            }
            attempt += 1;
            report.retries += 1;
            for &e in &kinked {
                jitter(&mut data.inputs[e], &mut rng);
            }
            base_pattern = relu_patterns(spec, &p, &data, &mut ws);
            grad.iter_mut().for_each(|g| *g = 0.0);
            batch_loss(spec, &p, &objective, &data, None, Some(&mut grad), &mut ws);
        };
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grad[i];
        let abs = (numeric - analytic).abs();
        let rel = abs / numeric.abs().max(analytic.abs()).max(REL_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.max_abs_gradient = report.max_abs_gradient.max(analytic.abs());
    }
    Ok(report)
}
