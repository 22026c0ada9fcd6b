//! Utility algebra: `score - lambda * cost` and its argmax with deterministic tie-breaking.

use crate::error::{bail, Result};
use crate::types::{Preset, UtilityEstimate};

/// Utility of a (score, cost) pair at trade-off weight `lambda`.
pub fn utility(score: f64, cost: f64, lambda: f64) -> Result<f64> {
    if !score.is_finite() || !cost.is_finite() || !lambda.is_finite() {
        bail!(InvalidArgument, "utility inputs must be finite (score={score}, cost={cost}, lambda={lambda})");
    }
    if lambda < 0.0 {
        bail!(InvalidArgument, "lambda must be >= 0, got {lambda}");
    }
    Ok(score - lambda * cost)
}

/// Resolves a preset to `weight / c_max`.
pub fn resolve_preset(preset: Preset, c_max: f64) -> Result<f64> {
    if !(c_max > 0.0) || !c_max.is_finite() {
        bail!(InvalidArgument, "c_max must be positive and finite, got {c_max}");
    }
    Ok(preset.weight() / c_max)
}

/// Index of the best model under `lambda`.
///
/// Ties on utility go to the lower estimated cost, then to the earlier
/// catalog position.
pub fn argmax_utility(estimates: &UtilityEstimate, lambda: f64) -> Result<usize> {
    if estimates.is_empty() {
        bail!(InvalidArgument, "cannot select from an empty estimate set");
    }
    argmax_pairs(&estimates.scores, &estimates.costs, lambda)
}

/// Same as [`argmax_utility`] over parallel score/cost slices.
pub fn argmax_pairs(scores: &[f64], costs: &[f64], lambda: f64) -> Result<usize> {
    if scores.is_empty() || scores.len() != costs.len() {
        bail!(InvalidArgument, "score/cost slices must be nonempty and of equal length");
    }
    let mut best = 0;
    let mut best_u = utility(scores[0], costs[0], lambda)?;
    for m in 1..scores.len() {
        let u = utility(scores[m], costs[m], lambda)?;
        if u > best_u || (u == best_u && costs[m] < costs[best]) {
            best = m;
            best_u = u;
        }
    }
    Ok(best)
}
