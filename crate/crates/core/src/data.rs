//! Pure dataset operations: cost accounting, normalization, splits.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::types::{Pricing, RoutingDataset};

/// USD cost of a call given token counts and per-million-token prices.
pub fn compute_cost(input_tokens: u64, output_tokens: u64, pricing: Pricing) -> f64 {
    input_tokens as f64 * pricing.input_price / 1e6 + output_tokens as f64 * pricing.output_price / 1e6
}

/// L2-normalizes every embedding. Fails on the first zero vector.
pub fn normalize_embeddings(dataset: &RoutingDataset) -> Result<RoutingDataset> {
    let mut out = dataset.clone();
    for r in out.records_mut() {
        match r.embedding.normalized() {
            Some(e) => r.embedding = e,
            None => bail!(InvalidData, "record {} has an all-zero embedding", r.id),
        }
    }
    Ok(out)
}

/// Maximum cost over every (query, model) cell.
pub fn c_max(dataset: &RoutingDataset) -> f64 {
    dataset
        .records()
        .iter()
        .flat_map(|r| r.outcomes.iter().map(|o| o.cost))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.10,
            test_frac: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            bail!(InvalidArgument, "split fractions must be positive, got {fr:?}");
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            bail!(InvalidArgument, "split fractions must sum to 1, got {fr:?}");
        }
        Ok(())
    }

    /// (train, val, test) sizes for `n` records; rounding remainder goes to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = libm::floor(n as f64 * self.val_frac + 1e-9) as usize;
        let test = libm::floor(n as f64 * self.test_frac + 1e-9) as usize;
        (n - val - test, val, test)
    }
}

/// Record positions of each part, in permuted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: RoutingDataset,
    pub val: RoutingDataset,
    pub test: RoutingDataset,
    pub indices: SplitIndices,
    pub spec: SplitSpec,
}

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Seeded permutation of `0..n` partitioned per `spec`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if n < MIN_SPLIT_RECORDS {
        bail!(InvalidArgument, "need at least {MIN_SPLIT_RECORDS} records to split, got {n}");
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, val, _) = spec.sizes(n);
    let test = perm.split_off(train + val);
    let val = perm.split_off(train);
    Ok(SplitIndices { train: perm, val, test })
}

pub fn split_dataset(dataset: &RoutingDataset, spec: &SplitSpec) -> Result<Split> {
    let indices = split_indices(dataset.len(), spec)?;
    Ok(Split {
        train: dataset.subset(&indices.train)?,
        val: dataset.subset(&indices.val)?,
        test: dataset.subset(&indices.test)?,
        indices,
        spec: *spec,
    })
}
