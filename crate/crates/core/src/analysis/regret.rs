//! Regret as a function of training-set size on synthetic benchmarks.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::locality::{PairSample, EPSILON_QUANTILE};
use super::synthetic::{generate_synthetic, SyntheticConfig};
use crate::error::{bail, Result};
use crate::linalg::{mean, sample_sd};
use crate::routers::{fit, Architecture, FittedRouter, Formulation, KnnIndex, RouterConfig};
use crate::types::{RoutingDataset, UtilityEstimate};
use crate::utility::{argmax_utility, utility};

/// Per-query regret `u(x, m*) - u(x, chosen)` of `router` on `test` at `lambda`.
pub fn query_regrets(router: &FittedRouter, test: &RoutingDataset, lambda: f64) -> Result<Vec<f64>> {
    test.records()
        .iter()
        .map(|r| {
            let truth = UtilityEstimate::from_outcomes(&r.outcomes);
            let best = argmax_utility(&truth, lambda)?;
            let chosen = router.select_index(r.embedding.as_slice(), lambda)?;
            let u = |m: usize| utility(truth.scores[m], truth.costs[m], lambda);
            Ok(u(best)? - u(chosen)?)
        })
        .collect()
}

/// Distance to the `k`-th nearest stored point, in the chordal metric used
/// throughout the analysis.
pub fn knn_radius(index: &KnnIndex, x: &[f64], k: usize) -> Result<f64> {
    index.kth_distance(x, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSetup {
    /// Ascending train sizes, drawn as prefixes of each trial's train pool.
    pub train_sizes: Vec<usize>,
    pub k: usize,
    pub lambda: f64,
    pub trials: usize,
    pub archs: Vec<Architecture>,
    /// Records held out at the end of each trial's dataset.
    pub test_size: usize,
    /// Settings for every architecture; kNN uses `k` above.
    pub router: RouterConfig,
    /// When set, gradient-trained routers get `ceil(budget / n)` epochs at
    /// train size `n`, so every size sees the same number of sample gradients.
    pub gradient_budget: Option<usize>,
}

impl RegretSetup {
    pub fn validate(&self, config: &SyntheticConfig) -> Result<()> {
        if self.trials < 3 {
            bail!(InvalidArgument, "regret experiments need at least 3 trials, got {}", self.trials);
        }
        if self.train_sizes.is_empty() || self.train_sizes.windows(2).any(|w| w[0] >= w[1]) || self.train_sizes[0] == 0 {
            bail!(InvalidArgument, "train_sizes must be positive and strictly ascending");
        }
        if self.archs.is_empty() || self.k == 0 || self.test_size == 0 {
            bail!(InvalidArgument, "need at least one architecture, k >= 1 and a nonempty test set");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!(InvalidArgument, "lambda must be >= 0, got {}", self.lambda);
        }
        let available = config.n_queries.saturating_sub(self.test_size);
        let largest = *self.train_sizes.last().unwrap();
        if largest > available {
            bail!(InvalidArgument, "train size {largest} exceeds the {available} available train records");
        }
        Ok(())
    }
}

/// One (architecture, train size) cell aggregated over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCell {
    pub arch: Architecture,
    pub n: usize,
    pub mean_regret: f64,
    /// Standard error of the per-trial mean regrets.
    pub se: f64,
    /// Mean distance from a test query to its `k`-th nearest train record.
    pub delta_k: f64,
    /// Mean over trials of the locality modulus at that trial's `delta_k`;
    /// `None` if some trial had no pair that close.
    pub epsilon_hat: Option<f64>,
    pub per_trial: Vec<f64>,
}

impl RegretCell {
    /// Twice the locality modulus: the kNN regret bound.
    pub fn bound(&self) -> Option<f64> {
        self.epsilon_hat.map(|e| 2.0 * e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub synthetic: SyntheticConfig,
    pub setup: RegretSetup,
    pub quantile: f64,
    pub cells: Vec<RegretCell>,
}

impl RegretCurve {
    pub fn cell(&self, arch: Architecture, n: usize) -> Option<&RegretCell> {
        self.cells.iter().find(|c| c.arch == arch && c.n == n)
    }

    /// Cells of one architecture in train-size order.
    pub fn series(&self, arch: Architecture) -> Vec<&RegretCell> {
        self.cells.iter().filter(|c| c.arch == arch).collect()
    }

    /// Smallest train size whose mean regret is at most `threshold`.
    pub fn first_n_below(&self, arch: Architecture, threshold: f64) -> Option<usize> {
        self.series(arch).into_iter().find(|c| c.mean_regret <= threshold).map(|c| c.n)
    }
}

/// One trial's raw results: `(arch, n) -> (mean regret, delta_k, epsilon_hat)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub cells: Vec<(Architecture, usize, f64, f64, Option<f64>)>,
}

fn router_config(setup: &RegretSetup, arch: Architecture, n: usize, trial_seed: u64) -> RouterConfig {
    let mut c = setup.router.clone();
    c.k = setup.k;
    c.seed = trial_seed;
    if arch != Architecture::Knn && arch != Architecture::Linear {
        if let Some(budget) = setup.gradient_budget {
            c.epochs = budget.div_ceil(n).max(1);
        }
    }
    c
}

/// Runs one trial on its own resampled dataset. Trials are independent and
/// may be run in any order or concurrently.
pub fn regret_trial(config: &SyntheticConfig, setup: &RegretSetup, quantile: f64, trial: usize) -> Result<TrialResult> {
    setup.validate(config)?;
    let seed = config.seed.wrapping_add(trial as u64);
    let ds = generate_synthetic(&SyntheticConfig { seed, ..config.clone() })?;
    let pool = ds.len() - setup.test_size;
    let test = ds.subset(&(pool..ds.len()).collect::<Vec<_>>())?;
    let pairs = PairSample::all(&ds, setup.lambda)?;
    let mut cells = Vec::new();
    for &n in &setup.train_sizes {
        let train = ds.head(n)?;
        let index = KnnIndex::build(&train, false)?;
        let k = setup.k.min(n);
        let radii = test.records().iter().map(|r| knn_radius(&index, r.embedding.as_slice(), k)).collect::<Result<Vec<_>>>()?;
        let delta_k = mean(&radii);
        let eps = pairs.epsilon_hat(delta_k, quantile)?;
        for &arch in &setup.archs {
            let router = fit(arch, Formulation::Utility, &train, None, None, &router_config(setup, arch, n, seed))?;
            let regret = mean(&query_regrets(&router, &test, setup.lambda)?);
            cells.push((arch, n, regret, delta_k, eps));
        }
    }
    Ok(TrialResult { trial, cells })
}

/// Aggregates trial results (in any order) into a curve.
pub fn aggregate_trials(config: &SyntheticConfig, setup: &RegretSetup, quantile: f64, mut trials: Vec<TrialResult>) -> Result<RegretCurve> {
    if trials.len() != setup.trials {
        bail!(InvalidArgument, "expected {} trial results, got {}", setup.trials, trials.len());
    }
    trials.sort_by_key(|t| t.trial);
    let mut cells = Vec::new();
    for &arch in &setup.archs {
        for &n in &setup.train_sizes {
            let rows: Vec<(f64, f64, Option<f64>)> = trials
                .iter()
                .map(|t| {
                    t.cells
                        .iter()
                        .find(|c| c.0 == arch && c.1 == n)
                        .map(|c| (c.2, c.3, c.4))
                        .ok_or_else(|| crate::Error::InvalidState(alloc::format!("trial {} lacks cell {} n={n}", t.trial, arch.name())))
                })
                .collect::<Result<_>>()?;
            let per_trial: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let deltas: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let eps: Option<Vec<f64>> = rows.iter().map(|r| r.2).collect();
            cells.push(RegretCell {
                arch,
                n,
                mean_regret: mean(&per_trial),
                se: sample_sd(&per_trial) / libm::sqrt(per_trial.len() as f64),
                delta_k: mean(&deltas),
                epsilon_hat: eps.map(|e| mean(&e)),
                per_trial,
            });
        }
    }
    Ok(RegretCurve {
        synthetic: config.clone(),
        setup: setup.clone(),
        quantile,
        cells,
    })
}

/// Regret of each architecture at each train size, over `setup.trials`
/// resampled synthetic datasets, with the kNN radius and locality modulus
/// per cell.
pub fn regret_experiment(config: &SyntheticConfig, setup: &RegretSetup) -> Result<RegretCurve> {
    setup.validate(config)?;
    let trials = (0..setup.trials).map(|t| regret_trial(config, setup, EPSILON_QUANTILE, t)).collect::<Result<Vec<_>>>()?;
    aggregate_trials(config, setup, EPSILON_QUANTILE, trials)
}
