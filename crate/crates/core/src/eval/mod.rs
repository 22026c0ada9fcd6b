//! Test-set evaluation: λ sweeps, Pareto curves and their area, oracle and
//! random references, and preference-preset selection scores.

mod pareto;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use pareto::{auc, dominates, pareto_hull, EvalNorm, ParetoCurve, ParetoPoint};

use crate::error::{bail, Result};
use crate::routers::knn::Neighbor;
use crate::routers::{fit_knn, FittedRouter, Formulation, RouterConfig, RouterParams};
use crate::types::{Preset, RoutingDataset, UtilityEstimate};
use crate::utility::{argmax_pairs, argmax_utility, resolve_preset, utility};

/// Number of log-spaced points in the default grid.
pub const GRID_POINTS: usize = 101;

/// `0` followed by `points` log-spaced values of `lambda * c_max` over
/// `[1e-3, 1e3]`.
pub fn lambda_grid(c_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(c_max > 0.0) || !c_max.is_finite() {
        bail!(InvalidArgument, "c_max must be positive and finite, got {c_max}");
    }
    if points < 2 {
        bail!(InvalidArgument, "a log grid needs at least two points");
    }
    let mut grid = vec![0.0];
    let step = 6.0 / (points - 1) as f64;
    grid.extend((0..points).map(|i| libm::pow(10.0, -3.0 + step * i as f64) / c_max));
    Ok(grid)
}

/// The default sweep: `lambda_grid(c_max, GRID_POINTS)`.
pub fn default_grid(c_max: f64) -> Result<Vec<f64>> {
    lambda_grid(c_max, GRID_POINTS)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        bail!(InvalidArgument, "lambda grid is empty");
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        bail!(InvalidArgument, "lambda grid values must be finite and >= 0");
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        bail!(InvalidArgument, "lambda grid must be sorted ascending");
    }
    Ok(())
}

fn check_test(test: &RoutingDataset) -> Result<()> {
    if test.is_empty() {
        bail!(InvalidArgument, "test set is empty");
    }
    Ok(())
}

/// What a router needs per query to answer at any lambda.
enum Prepared {
    Estimate(UtilityEstimate),
    Neighbors(Vec<Neighbor>),
    Fixed(usize),
}

/// A router with its λ-independent work done once per test query.
pub struct PreparedRouter<'a> {
    router: &'a FittedRouter,
    queries: Vec<Prepared>,
}

impl<'a> PreparedRouter<'a> {
    pub fn new(router: &'a FittedRouter, test: &RoutingDataset) -> Result<Self> {
        check_test(test)?;
        if test.catalog() != &router.catalog || test.dim() != router.dim {
            bail!(InvalidArgument, "test set does not match the router's catalog or dimension");
        }
        let queries = test
            .records()
            .iter()
            .map(|r| {
                let x = r.embedding.as_slice();
                Ok(match (&router.params, router.formulation) {
                    (RouterParams::Knn { index }, Formulation::Selection) => Prepared::Neighbors(index.neighbors(x, router.config.k)?),
                    (_, Formulation::Utility) => Prepared::Estimate(router.predict_utility(x)?),
                    (_, Formulation::Selection) => {
                        let lambda = router.selection_lambda.unwrap_or(0.0);
                        Prepared::Fixed(router.select_index(x, lambda)?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { router, queries })
    }

    /// Model chosen for test query `q` at `lambda`.
    pub fn choose(&self, q: usize, lambda: f64) -> Result<usize> {
        self.router.check_lambda(lambda)?;
        match &self.queries[q] {
            Prepared::Estimate(e) => argmax_utility(e, lambda),
            Prepared::Neighbors(n) => match &self.router.params {
                RouterParams::Knn { index } => index.vote(n, lambda),
                _ => unreachable!("neighbor sets are only prepared for kNN routers"),
            },
            Prepared::Fixed(m) => Ok(*m),
        }
    }

    /// Predicted estimate for query `q`, for utility routers.
    pub fn estimate(&self, q: usize) -> Option<&UtilityEstimate> {
        match &self.queries[q] {
            Prepared::Estimate(e) => Some(e),
            _ => None,
        }
    }
}

fn mean_point(test: &RoutingDataset, mut choose: impl FnMut(usize) -> Result<usize>) -> Result<ParetoPoint> {
    let (mut cost, mut score) = (0.0, 0.0);
    for (q, r) in test.records().iter().enumerate() {
        let o = &r.outcomes[choose(q)?];
        cost += o.cost;
        score += o.score;
    }
    let n = test.len() as f64;
    Ok(ParetoPoint::new(cost / n, score / n))
}

/// Mean actual (cost, score) of the router's choices on `test` at `lambda`.
pub fn route_testset(router: &FittedRouter, test: &RoutingDataset, lambda: f64) -> Result<ParetoPoint> {
    let prepared = PreparedRouter::new(router, test)?;
    mean_point(test, |q| prepared.choose(q, lambda))
}

/// One [`route_testset`] point per grid value.
pub fn lambda_sweep(router: &FittedRouter, test: &RoutingDataset, grid: &[f64]) -> Result<Vec<ParetoPoint>> {
    check_grid(grid)?;
    let prepared = PreparedRouter::new(router, test)?;
    grid.iter().map(|&l| mean_point(test, |q| prepared.choose(q, l))).collect()
}

/// Sweep, frontier and area for a router.
pub fn router_curve(router: &FittedRouter, test: &RoutingDataset, grid: &[f64], norm: &EvalNorm) -> Result<ParetoCurve> {
    let points = lambda_sweep(router, test, grid)?;
    Ok(ParetoCurve::from_points(grid.to_vec(), points, norm))
}

/// Mean outcome of choosing each query's true utility-optimal model at `lambda`.
pub fn oracle_point(test: &RoutingDataset, lambda: f64) -> Result<ParetoPoint> {
    check_test(test)?;
    let truth: Vec<UtilityEstimate> = test.records().iter().map(|r| UtilityEstimate::from_outcomes(&r.outcomes)).collect();
    mean_point(test, |q| argmax_utility(&truth[q], lambda))
}

/// Lambdas above 0 at which query outcomes switch their optimal model, in
/// ascending order, each with the model optimal from there on.
fn switch_points(scores: &[f64], costs: &[f64]) -> Result<Vec<(f64, usize)>> {
    let mut candidates = Vec::new();
    for i in 0..scores.len() {
        for j in 0..i {
            let dc = costs[i] - costs[j];
            if dc != 0.0 {
                let l = (scores[i] - scores[j]) / dc;
                if l > 0.0 && l.is_finite() {
                    candidates.push(l);
                }
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // the choice is constant between consecutive candidates; probing the
    // midpoint avoids near-ties at the candidate itself
    let mut current = argmax_pairs(scores, costs, 0.0)?;
    let mut out = Vec::new();
    for (i, &l) in candidates.iter().enumerate() {
        let probe = candidates.get(i + 1).map_or(2.0 * l, |next| (l + next) / 2.0);
        let m = argmax_pairs(scores, costs, probe)?;
        if m != current {
            out.push((l, m));
            current = m;
        }
    }
    Ok(out)
}

/// The oracle's sweep over `grid`. Its frontier also includes every lambda at
/// which some query's optimal model changes, so it traces the exact oracle
/// frontier regardless of grid resolution.
pub fn oracle_curve(test: &RoutingDataset, grid: &[f64], norm: &EvalNorm) -> Result<ParetoCurve> {
    check_grid(grid)?;
    check_test(test)?;
    let points = grid.iter().map(|&l| oracle_point(test, l)).collect::<Result<Vec<_>>>()?;

    let n = test.len() as f64;
    let mut initial = Vec::with_capacity(test.len());
    let mut steps = Vec::with_capacity(test.len());
    let mut events = Vec::new();
    for (q, r) in test.records().iter().enumerate() {
        let (s, c): (Vec<f64>, Vec<f64>) = r.outcomes.iter().map(|o| (o.score, o.cost)).unzip();
        initial.push(argmax_pairs(&s, &c, 0.0)?);
        let sw = switch_points(&s, &c)?;
        events.extend(sw.iter().map(|&(l, m)| (l, q, m)));
        steps.push(sw);
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // Incremental sweep: one approximate point per distinct switching lambda.
    let record = |q: usize, m: usize| &test.records()[q].outcomes[m];
    let mut chosen = initial.clone();
    let mut cost: f64 = chosen.iter().enumerate().map(|(q, &m)| record(q, m).cost).sum();
    let mut score: f64 = chosen.iter().enumerate().map(|(q, &m)| record(q, m).score).sum();
    let mut swept: Vec<(f64, ParetoPoint)> = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let l = events[i].0;
        while i < events.len() && events[i].0 == l {
            let (_, q, m) = events[i];
            let (old, new) = (record(q, chosen[q]), record(q, m));
            cost += new.cost - old.cost;
            score += new.score - old.score;
            chosen[q] = m;
            i += 1;
        }
        swept.push((l, ParetoPoint::new(cost / n, score / n)));
    }

    // Hull vertices from the sweep are recomputed exactly.
    let mut candidates = points.clone();
    candidates.extend(swept.iter().map(|(_, p)| *p));
    let approx_hull = pareto_hull(&candidates);
    let mut frontier_points = points.clone();
    for (l, p) in &swept {
        if approx_hull.contains(p) {
            let exact = mean_point(test, |q| {
                let k = steps[q].partition_point(|(at, _)| at <= l);
                Ok(if k == 0 { initial[q] } else { steps[q][k - 1].1 })
            })?;
            frontier_points.push(exact);
        }
    }
    let hull = pareto_hull(&frontier_points);
    let area = auc(&hull, norm);
    Ok(ParetoCurve { lambdas: grid.to_vec(), points, hull, auc: area })
}

/// Expected outcome of picking a model uniformly at random per query.
pub fn random_point(test: &RoutingDataset) -> Result<ParetoPoint> {
    check_test(test)?;
    let cells = (test.len() * test.n_models()) as f64;
    let (mut cost, mut score) = (0.0, 0.0);
    for r in test.records() {
        for o in &r.outcomes {
            cost += o.cost;
            score += o.score;
        }
    }
    Ok(ParetoPoint::new(cost / cells, score / cells))
}

/// The random policy's single expected point, its hull and area.
pub fn random_curve(test: &RoutingDataset, norm: &EvalNorm) -> Result<ParetoCurve> {
    let p = random_point(test)?;
    Ok(ParetoCurve::from_points(Vec::new(), vec![p], norm))
}

/// Score of one preference preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetResult {
    pub preset: Preset,
    pub lambda: f64,
    /// Mean over test queries of the chosen model's actual utility.
    pub mean_utility: f64,
    /// Times each catalog model was chosen, in catalog order.
    pub chosen: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// In the order low_cost, balanced, high_performance.
    pub presets: Vec<PresetResult>,
    pub average: f64,
}

fn selection_with(test: &RoutingDataset, c_max: f64, mut choose: impl FnMut(usize, usize, f64) -> Result<usize>) -> Result<SelectionReport> {
    check_test(test)?;
    let mut presets = Vec::with_capacity(3);
    for (p, preset) in Preset::ALL.iter().enumerate() {
        let lambda = resolve_preset(*preset, c_max)?;
        let mut chosen = vec![0; test.n_models()];
        let mut total = 0.0;
        for (q, r) in test.records().iter().enumerate() {
            let m = choose(p, q, lambda)?;
            chosen[m] += 1;
            total += utility(r.outcomes[m].score, r.outcomes[m].cost, lambda)?;
        }
        presets.push(PresetResult {
            preset: *preset,
            lambda,
            mean_utility: total / test.len() as f64,
            chosen,
        });
    }
    let average = presets.iter().map(|p| p.mean_utility).sum::<f64>() / 3.0;
    Ok(SelectionReport { presets, average })
}

/// Scores one router per preset (in [`Preset::ALL`] order; a utility router
/// may appear in all three slots). Presets resolve against `c_max`, the full
/// benchmark's maximum cost.
pub fn selection_eval(routers: [&FittedRouter; 3], test: &RoutingDataset, c_max: f64) -> Result<SelectionReport> {
    let mut prepared: Vec<PreparedRouter> = Vec::with_capacity(3);
    for (i, r) in routers.iter().enumerate() {
        prepared.push(PreparedRouter::new(r, test)?);
        r.check_lambda(resolve_preset(Preset::ALL[i], c_max)?)?;
    }
    selection_with(test, c_max, |p, q, lambda| prepared[p].choose(q, lambda))
}

/// Preset scores of the per-query optimal model.
pub fn oracle_selection(test: &RoutingDataset, c_max: f64) -> Result<SelectionReport> {
    selection_with(test, c_max, |_, q, lambda| {
        let o = &test.records()[q].outcomes;
        argmax_utility(&UtilityEstimate::from_outcomes(o), lambda)
    })
}

/// Expected preset scores of a uniformly random choice. `chosen` holds
/// expected counts rounded down.
pub fn random_selection(test: &RoutingDataset, c_max: f64) -> Result<SelectionReport> {
    check_test(test)?;
    let m = test.n_models();
    let mut presets = Vec::with_capacity(3);
    for preset in Preset::ALL {
        let lambda = resolve_preset(preset, c_max)?;
        let mut total = 0.0;
        for r in test.records() {
            for o in &r.outcomes {
                total += utility(o.score, o.cost, lambda)?;
            }
        }
        presets.push(PresetResult {
            preset,
            lambda,
            mean_utility: total / (test.len() * m) as f64,
            chosen: vec![test.len() / m; m],
        });
    }
    let average = presets.iter().map(|p| p.mean_utility).sum::<f64>() / 3.0;
    Ok(SelectionReport { presets, average })
}

/// Picks the kNN `k` with the highest validation AUC (ties to the smaller
/// `k`) and returns it with the router fitted on `train`.
pub fn tune_knn_k(train: &RoutingDataset, val: &RoutingDataset, candidates: &[usize], config: &RouterConfig, grid: &[f64], norm: &EvalNorm) -> Result<(usize, f64, FittedRouter)> {
    if candidates.is_empty() || candidates.contains(&0) {
        bail!(InvalidArgument, "k candidates must be nonempty and positive");
    }
    let base = fit_knn(train, config)?;
    let mut best: Option<(usize, f64)> = None;
    for &k in candidates {
        let mut r = base.clone();
        r.config.k = k;
        let a = router_curve(&r, val, grid, norm)?.auc;
        if best.is_none_or(|(bk, ba)| a > ba || (a == ba && k < bk)) {
            best = Some((k, a));
        }
    }
    let (k, a) = best.unwrap();
    let mut r = base;
    r.config.k = k;
    Ok((k, a, r))
}
