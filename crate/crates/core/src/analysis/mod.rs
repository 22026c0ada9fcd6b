//! Locality curves, the empirical locality modulus, covering numbers,
//! synthetic Lipschitz benchmarks and regret-versus-sample-size experiments.

mod locality;
mod regret;
mod synthetic;

pub use locality::{agreement, default_tau, epsilon_hat, locality_curve, spearman, LocalityBin, LocalityCurve, PairSample, EPSILON_QUANTILE, EXHAUSTIVE_LIMIT};
pub use regret::{aggregate_trials, knn_radius, query_regrets, regret_experiment, regret_trial, RegretCell, RegretCurve, RegretSetup, TrialResult};
pub use synthetic::{generate_synthetic, SyntheticConfig, FREQUENCY};

use alloc::vec::Vec;

use crate::linalg::euclidean;

/// Greedy cover: scanning in order, each point not yet within `radius` of a
/// center becomes a center. The count upper-bounds the optimal covering number.
pub fn covering_number<P: AsRef<[f64]>>(points: &[P], radius: f64) -> usize {
    let mut centers: Vec<&[f64]> = Vec::new();
    for p in points {
        let p = p.as_ref();
        if !centers.iter().any(|c| euclidean(c, p) <= radius) {
            centers.push(p);
        }
    }
    centers.len()
}

/// Least-squares slope of `ln count` against `ln(1 / radius)`.
pub fn covering_slope(radii: &[f64], counts: &[usize]) -> f64 {
    let xs: Vec<f64> = radii.iter().map(|r| -libm::log(*r)).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| libm::log(c as f64)).collect();
    let (mx, my) = (crate::linalg::mean(&xs), crate::linalg::mean(&ys));
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}
