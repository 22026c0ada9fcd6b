//! Locality of model performance in embedding space: binned agreement curves
//! and the empirical locality modulus.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::linalg::{chordal_distance, mean, sample_sd};
use crate::types::RoutingDataset;
use crate::utility::utility;

/// Default quantile for [`epsilon_hat`].
pub const EPSILON_QUANTILE: f64 = 0.95;

/// Above this many records, [`epsilon_hat`] samples pairs instead of
/// enumerating them.
pub const EXHAUSTIVE_LIMIT: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean agreement; `None` for an empty bin.
    pub agreement: Option<f64>,
    /// Standard error of the mean agreement.
    pub se: f64,
    /// Mean Spearman correlation of the pair's per-model score vectors, over
    /// pairs where it is defined.
    pub spearman: Option<f64>,
}

/// Agreement between query pairs as a function of embedding distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityCurve {
    pub tau: f64,
    pub n_pairs: usize,
    pub seed: u64,
    /// Equal-width bins covering `[0, 2]`.
    pub bins: Vec<LocalityBin>,
}

impl LocalityCurve {
    /// Adjacent non-empty bin pairs `(b, b')` where agreement rises by more
    /// than `n_se` standard errors (the larger of the two bins').
    pub fn monotone_violations(&self, n_se: f64) -> Vec<(usize, usize)> {
        let filled: Vec<usize> = (0..self.bins.len()).filter(|&b| self.bins[b].agreement.is_some()).collect();
        filled
            .windows(2)
            .filter(|w| {
                let (a, b) = (&self.bins[w[0]], &self.bins[w[1]]);
                b.agreement.unwrap() > a.agreement.unwrap() + n_se * a.se.max(b.se)
            })
            .map(|w| (w[0], w[1]))
            .collect()
    }
}

/// Fraction of models whose scores differ by at most `tau`.
pub fn agreement(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let close = a.iter().zip(b).filter(|(x, y)| (*x - *y).abs() <= tau).count();
    close as f64 / a.len() as f64
}

/// Average ranks (ties share the mean of their positions), 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either vector is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(num / libm::sqrt(va * vb))
}

/// Half the sample standard deviation of every score cell.
pub fn default_tau(dataset: &RoutingDataset) -> f64 {
    let all: Vec<f64> = dataset.records().iter().flat_map(|r| r.outcomes.iter().map(|o| o.score)).collect();
    sample_sd(&all) / 2.0
}

fn scores(dataset: &RoutingDataset, i: usize) -> Vec<f64> {
    dataset.records()[i].outcomes.iter().map(|o| o.score).collect()
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Samples `n_pairs` distinct-record pairs uniformly and bins their
/// agreement by chordal embedding distance. `tau = None` uses
/// [`default_tau`].
pub fn locality_curve(dataset: &RoutingDataset, n_pairs: usize, bins: usize, tau: Option<f64>, seed: u64) -> Result<LocalityCurve> {
    let n = dataset.len();
    if n < 2 {
        bail!(InvalidArgument, "locality needs at least 2 records, got {n}");
    }
    if n_pairs == 0 || bins == 0 {
        bail!(InvalidArgument, "n_pairs and bins must be >= 1");
    }
    let tau = match tau {
        Some(t) if !(t > 0.0 && t.is_finite()) => bail!(InvalidArgument, "tau must be positive, got {t}"),
        Some(t) => t,
        None => default_tau(dataset),
    };
    let width = 2.0 / bins as f64;
    let mut agree: Vec<Vec<f64>> = vec![Vec::new(); bins];
    let mut rho: Vec<Vec<f64>> = vec![Vec::new(); bins];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_pairs {
        let (i, j) = random_pair(&mut rng, n);
        let (ri, rj) = (&dataset.records()[i], &dataset.records()[j]);
        let d = chordal_distance(ri.embedding.as_slice(), rj.embedding.as_slice());
        let b = ((d / width) as usize).min(bins - 1);
        let (si, sj) = (scores(dataset, i), scores(dataset, j));
        agree[b].push(agreement(&si, &sj, tau));
        if let Some(r) = spearman(&si, &sj) {
            rho[b].push(r);
        }
    }
    let bins = (0..bins)
        .map(|b| {
            let a = &agree[b];
            LocalityBin {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                count: a.len(),
                agreement: (!a.is_empty()).then(|| mean(a)),
                se: if a.len() > 1 { sample_sd(a) / libm::sqrt(a.len() as f64) } else { 0.0 },
                spearman: (!rho[b].is_empty()).then(|| mean(&rho[b])),
            }
        })
        .collect();
    Ok(LocalityCurve { tau, n_pairs, seed, bins })
}

/// Pairs of records with their chordal distance and largest per-model
/// utility difference, sorted by distance.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    distances: Vec<f64>,
    gaps: Vec<f64>,
}

fn utility_row(dataset: &RoutingDataset, i: usize, lambda: f64) -> Result<Vec<f64>> {
    dataset.records()[i].outcomes.iter().map(|o| utility(o.score, o.cost, lambda)).collect()
}

impl PairSample {
    fn from_pairs(dataset: &RoutingDataset, pairs: impl Iterator<Item = (usize, usize)>, lambda: f64) -> Result<Self> {
        let rows = (0..dataset.len()).map(|i| utility_row(dataset, i, lambda)).collect::<Result<Vec<_>>>()?;
        let mut all: Vec<(f64, f64)> = pairs
            .map(|(i, j)| {
                let (ri, rj) = (&dataset.records()[i], &dataset.records()[j]);
                let d = chordal_distance(ri.embedding.as_slice(), rj.embedding.as_slice());
                let gap = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (d, gap)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (distances, gaps) = all.into_iter().unzip();
        Ok(Self { distances, gaps })
    }

    /// Every unordered pair of distinct records.
    pub fn all(dataset: &RoutingDataset, lambda: f64) -> Result<Self> {
        let n = dataset.len();
        if n < 2 {
            bail!(InvalidArgument, "pair statistics need at least 2 records, got {n}");
        }
        Self::from_pairs(dataset, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))), lambda)
    }

    /// `n_pairs` uniformly sampled pairs of distinct records.
    pub fn sampled(dataset: &RoutingDataset, n_pairs: usize, lambda: f64, seed: u64) -> Result<Self> {
        let n = dataset.len();
        if n < 2 || n_pairs == 0 {
            bail!(InvalidArgument, "pair sampling needs at least 2 records and 1 pair");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = (0..n_pairs).map(|_| random_pair(&mut rng, n)).collect();
        Self::from_pairs(dataset, pairs.into_iter(), lambda)
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Number of pairs strictly closer than `delta`.
    pub fn within(&self, delta: f64) -> usize {
        self.distances.partition_point(|&d| d < delta)
    }

    /// The `quantile` (nearest rank) of utility gaps among pairs closer than
    /// `delta`, maximized over every smaller distance threshold so the
    /// estimate is non-decreasing in `delta`. `None` when no pair is closer
    /// than `delta`.
    pub fn epsilon_hat(&self, delta: f64, quantile: f64) -> Result<Option<f64>> {
        if !(quantile > 0.0 && quantile <= 1.0) {
            bail!(InvalidArgument, "quantile must lie in (0, 1], got {quantile}");
        }
        if delta.is_nan() {
            bail!(InvalidArgument, "delta must be a number");
        }
        let n = self.within(delta);
        if n == 0 {
            return Ok(None);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.gaps[a].total_cmp(&self.gaps[b]));
        let mut rank = vec![0usize; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let mut tree = Fenwick::new(n);
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            tree.add(rank[i]);
            let group_end = i + 1 == n || self.distances[i + 1] != self.distances[i];
            if group_end {
                let k = libm::ceil(quantile * (i + 1) as f64).max(1.0) as usize;
                best = best.max(self.gaps[order[tree.kth(k.min(i + 1))]]);
            }
        }
        Ok(Some(best))
    }
}

/// Counts over value ranks, for running order statistics.
struct Fenwick {
    tree: Vec<usize>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Rank of the `k`-th smallest inserted value, `k >= 1`.
    fn kth(&self, mut k: usize) -> usize {
        let mut pos = 0;
        let mut step = (self.tree.len() - 1).next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] < k {
                pos = next;
                k -= self.tree[next];
            }
            step /= 2;
        }
        pos
    }
}

/// Empirical locality modulus at `delta` with utilities at `lambda`
/// (0 for pure scores). Uses every pair up to [`EXHAUSTIVE_LIMIT`] records
/// and a seeded sample of a million pairs beyond that.
pub fn epsilon_hat(dataset: &RoutingDataset, delta: f64, quantile: f64, lambda: f64) -> Result<Option<f64>> {
    let pairs = if dataset.len() <= EXHAUSTIVE_LIMIT {
        PairSample::all(dataset, lambda)?
    } else {
        PairSample::sampled(dataset, 1_000_000, lambda, 0)?
    };
    pairs.epsilon_hat(delta, quantile)
}
