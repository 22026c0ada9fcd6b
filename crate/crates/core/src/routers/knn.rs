//! Exact cosine-similarity kNN over a stored support set.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::linalg::dot;
use crate::types::{RoutingDataset, UtilityEstimate};
use crate::utility::{argmax_pairs, utility};

/// Tolerance on the unit-norm precondition of stored and query embeddings.
pub const UNIT_TOL: f64 = 1e-6;

/// How neighbor outcomes are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeighting {
    /// Plain mean over the k nearest neighbors.
    #[default]
    Uniform,
    /// Mean weighted by `(1 + cos) / 2`.
    Similarity,
}

/// The support set: unit-norm train embeddings with their outcome rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    dim: usize,
    n_models: usize,
    ids: Vec<String>,
    /// Row-major `n x dim`.
    embeddings: Vec<f64>,
    /// Row-major `n x n_models`.
    scores: Vec<f64>,
    costs: Vec<f64>,
}

/// A neighbor: record position in the index and its cosine similarity to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

impl KnnIndex {
    /// Builds the index. Embeddings must already be unit norm unless
    /// `auto_normalize` is set.
    pub fn build(train: &RoutingDataset, auto_normalize: bool) -> Result<Self> {
        if train.is_empty() {
            bail!(InvalidArgument, "cannot build a kNN index from an empty train set");
        }
        let n_models = train.n_models();
        let mut index = Self {
            dim: train.dim(),
            n_models,
            ids: Vec::with_capacity(train.len()),
            embeddings: Vec::with_capacity(train.len() * train.dim()),
            scores: Vec::with_capacity(train.len() * n_models),
            costs: Vec::with_capacity(train.len() * n_models),
        };
        for r in train.records() {
            let emb = if r.embedding.is_unit(UNIT_TOL) {
                r.embedding.clone()
            } else if auto_normalize {
                match r.embedding.normalized() {
                    Some(e) => e,
                    None => bail!(InvalidData, "record {} has an all-zero embedding", r.id),
                }
            } else {
                bail!(
                    InvalidArgument,
                    "record {} embedding is not unit norm (norm {}); normalize first",
                    r.id,
                    r.embedding.norm()
                );
            };
            index.ids.push(r.id.clone());
            index.embeddings.extend_from_slice(emb.as_slice());
            index.scores.extend(r.outcomes.iter().map(|o| o.score));
            index.costs.extend(r.outcomes.iter().map(|o| o.cost));
        }
        Ok(index)
    }

    /// Checks internal consistency, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.embeddings.len() != n * self.dim || self.scores.len() != n * self.n_models || self.costs.len() != n * self.n_models {
            bail!(Schema, "kNN index arrays do not match {n} records of dim {} and {} models", self.dim, self.n_models);
        }
        if self.embeddings.iter().chain(&self.scores).chain(&self.costs).any(|v| !v.is_finite()) {
            bail!(Schema, "kNN index holds a non-finite value");
        }
        if (0..n).any(|i| (libm::sqrt(dot(self.embedding(i), self.embedding(i))) - 1.0).abs() > UNIT_TOL) {
            bail!(Schema, "kNN index holds a non-unit embedding");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scores(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n_models..(i + 1) * self.n_models]
    }

    pub fn costs(&self, i: usize) -> &[f64] {
        &self.costs[i * self.n_models..(i + 1) * self.n_models]
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if self.is_empty() {
            bail!(InvalidState, "kNN index is empty");
        }
        if x.len() != self.dim {
            bail!(InvalidArgument, "query dimension {} does not match index dimension {}", x.len(), self.dim);
        }
        Ok(())
    }

    /// The `min(k, n)` nearest stored records by cosine similarity, most
    /// similar first. Equal similarities are ordered by record id.
    pub fn neighbors(&self, x: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(x)?;
        if k == 0 {
            bail!(InvalidArgument, "k must be >= 1");
        }
        let norm = libm::sqrt(dot(x, x));
        if norm == 0.0 {
            bail!(InvalidArgument, "query embedding is the zero vector");
        }
        let scale = if (norm - 1.0).abs() <= UNIT_TOL { 1.0 } else { norm };
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|i| Neighbor {
                index: i,
                similarity: (dot(self.embedding(i), x) / scale).clamp(-1.0, 1.0),
            })
            .collect();
        let cmp = |a: &Neighbor, b: &Neighbor| -> Ordering {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| self.ids[a.index].cmp(&self.ids[b.index]))
        };
        let k = k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        Ok(all)
    }

    /// Mean (or similarity-weighted mean) of neighbor scores and costs per model.
    pub fn predict(&self, x: &[f64], k: usize, weighting: KnnWeighting) -> Result<UtilityEstimate> {
        let nbrs = self.neighbors(x, k)?;
        let weights: Vec<f64> = match weighting {
            KnnWeighting::Uniform => alloc::vec![1.0; nbrs.len()],
            KnnWeighting::Similarity => {
                let w: Vec<f64> = nbrs.iter().map(|n| (1.0 + n.similarity) / 2.0).collect();
                if w.iter().sum::<f64>() > 0.0 {
                    w
                } else {
                    alloc::vec![1.0; nbrs.len()]
                }
            }
        };
        let total: f64 = weights.iter().sum();
        let mut scores = alloc::vec![0.0; self.n_models];
        let mut costs = alloc::vec![0.0; self.n_models];
        for (n, w) in nbrs.iter().zip(&weights) {
            for m in 0..self.n_models {
                scores[m] += w * self.scores(n.index)[m];
                costs[m] += w * self.costs(n.index)[m];
            }
        }
        for m in 0..self.n_models {
            scores[m] /= total;
            costs[m] /= total;
        }
        UtilityEstimate::new(scores, costs)
    }

    /// Plurality vote of the neighbors' own best models at `lambda`.
    ///
    /// Vote ties go to the higher mean neighbor utility, then to lower mean
    /// neighbor cost, then to catalog order.
    pub fn select(&self, x: &[f64], k: usize, lambda: f64) -> Result<usize> {
        self.vote(&self.neighbors(x, k)?, lambda)
    }

    /// The vote of [`KnnIndex::select`] over an already computed neighbor set.
    pub fn vote(&self, nbrs: &[Neighbor], lambda: f64) -> Result<usize> {
        let mut votes = alloc::vec![0usize; self.n_models];
        let mut mean_u = alloc::vec![0.0; self.n_models];
        let mut mean_c = alloc::vec![0.0; self.n_models];
        for n in nbrs {
            let (s, c) = (self.scores(n.index), self.costs(n.index));
            votes[argmax_pairs(s, c, lambda)?] += 1;
            for m in 0..self.n_models {
                mean_u[m] += utility(s[m], c[m], lambda)?;
                mean_c[m] += c[m];
            }
        }
        let mut best = 0;
        for m in 1..self.n_models {
            let better = match votes[m].cmp(&votes[best]) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => mean_u[m] > mean_u[best] || (mean_u[m] == mean_u[best] && mean_c[m] < mean_c[best]),
            };
            if better {
                best = m;
            }
        }
        Ok(best)
    }

    /// Cosine-induced chordal distance `sqrt(2 - 2 cos)` to the k-th nearest
    /// stored point.
    pub fn kth_distance(&self, x: &[f64], k: usize) -> Result<f64> {
        if k > self.len() {
            bail!(InvalidArgument, "k = {k} exceeds index size {}", self.len());
        }
        let nbrs = self.neighbors(x, k)?;
        let sim = nbrs[k - 1].similarity.clamp(-1.0, 1.0);
        Ok(libm::sqrt((2.0 - 2.0 * sim).max(0.0)))
    }
}
