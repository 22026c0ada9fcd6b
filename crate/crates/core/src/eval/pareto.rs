//! Pareto frontier extraction and normalized area under the frontier.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::types::RoutingDataset;

/// Mean actual cost and score of a routing policy over a test set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub mean_cost: f64,
    pub mean_score: f64,
}

impl ParetoPoint {
    pub fn new(mean_cost: f64, mean_score: f64) -> Self {
        Self { mean_cost, mean_score }
    }
}

/// Scales mapping costs to `[0, 1]` and scores to `[0, 100]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalNorm {
    /// Score mapped to 100.
    pub score_scale: f64,
    /// Cost mapped to 1.
    pub cost_scale: f64,
}

impl EvalNorm {
    pub fn new(score_scale: f64, cost_scale: f64) -> Result<Self> {
        if !(score_scale > 0.0 && score_scale.is_finite() && cost_scale > 0.0 && cost_scale.is_finite()) {
            bail!(InvalidArgument, "normalization scales must be positive and finite (score {score_scale}, cost {cost_scale})");
        }
        Ok(Self { score_scale, cost_scale })
    }

    /// Score scale from the highest score in `test`, cost scale `c_max`
    /// (normally the full benchmark's).
    pub fn from_test(test: &RoutingDataset, c_max: f64) -> Result<Self> {
        let max = test.records().iter().flat_map(|r| r.outcomes.iter().map(|o| o.score)).fold(f64::NEG_INFINITY, f64::max);
        Self::new(max, c_max)
    }
}

/// Whether `a` dominates `b`: no more expensive, no worse, and strictly
/// better in one of the two.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.mean_cost <= b.mean_cost && a.mean_score >= b.mean_score && (a.mean_cost < b.mean_cost || a.mean_score > b.mean_score)
}

/// Twice the signed area of the turn `a -> b -> c`; non-negative when `b`
/// lies on or below the chord from `a` to `c`.
fn turn(a: &ParetoPoint, b: &ParetoPoint, c: &ParetoPoint) -> f64 {
    (b.mean_cost - a.mean_cost) * (c.mean_score - a.mean_score) - (b.mean_score - a.mean_score) * (c.mean_cost - a.mean_cost)
}

/// Undominated points that lie strictly above every chord between their
/// neighbors, sorted by cost. Scores strictly increase along the result.
pub fn pareto_hull(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<ParetoPoint> = points.to_vec();
    sorted.sort_by(|a, b| a.mean_cost.total_cmp(&b.mean_cost).then_with(|| b.mean_score.total_cmp(&a.mean_score)));
    let mut frontier: Vec<ParetoPoint> = Vec::with_capacity(sorted.len());
    for p in sorted {
        if frontier.last().is_none_or(|q| p.mean_score > q.mean_score) {
            frontier.push(p);
        }
    }
    let mut hull: Vec<ParetoPoint> = Vec::with_capacity(frontier.len());
    for p in frontier {
        while hull.len() >= 2 && turn(&hull[hull.len() - 2], &hull[hull.len() - 1], &p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Area under the normalized hull on `[leftmost cost, 1]`: trapezoids
/// between hull points, constant after the last one, nothing to the left of
/// the first. `hull` must be sorted by cost, as returned by [`pareto_hull`].
pub fn auc(hull: &[ParetoPoint], norm: &EvalNorm) -> f64 {
    let pts: Vec<(f64, f64)> = hull.iter().map(|p| (p.mean_cost / norm.cost_scale, 100.0 * p.mean_score / norm.score_scale)).collect();
    let Some(&(last_c, last_s)) = pts.last() else {
        return 0.0;
    };
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((c0, s0), (c1, s1)) = (w[0], w[1]);
        if c0 >= 1.0 {
            break;
        }
        let end = c1.min(1.0);
        let s_end = if c1 > 1.0 { s0 + (s1 - s0) * (end - c0) / (c1 - c0) } else { s1 };
        area += (end - c0) * (s0 + s_end) / 2.0;
    }
    if last_c < 1.0 {
        area += (1.0 - last_c) * last_s;
    }
    area
}

/// Points of a λ sweep with their frontier and normalized area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoCurve {
    pub lambdas: Vec<f64>,
    /// One point per entry of `lambdas`.
    pub points: Vec<ParetoPoint>,
    pub hull: Vec<ParetoPoint>,
    pub auc: f64,
}

impl ParetoCurve {
    pub fn from_points(lambdas: Vec<f64>, points: Vec<ParetoPoint>, norm: &EvalNorm) -> Self {
        let hull = pareto_hull(&points);
        let auc = auc(&hull, norm);
        Self { lambdas, points, hull, auc }
    }
}
