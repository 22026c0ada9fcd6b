//! Synthetic benchmarks with Lipschitz score surfaces on a low-dimensional sphere.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::linalg::dot;
use crate::types::{CatalogEntry, Embedding, ModelCatalog, ModelId, Outcome, Pricing, QueryRecord, RoutingDataset};

/// Angular frequency of the sinusoidal score component.
pub const FREQUENCY: f64 = 4.0;

/// Token counts attached to every synthetic outcome.
const TOKENS: u64 = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Intrinsic dimension `d`: latent points live on the unit `d`-sphere in `R^(d+1)`.
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub n_models: usize,
    /// Upper bound on every score surface's Lipschitz constant.
    pub lipschitz_l: f64,
    pub noise_sd: f64,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            ambient_dim: 16,
            n_models: 4,
            lipschitz_l: 1.0,
            noise_sd: 0.0,
            n_queries: 1000,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            bail!(InvalidArgument, "latent_dim must be >= 1");
        }
        if self.ambient_dim <= self.latent_dim {
            bail!(InvalidArgument, "ambient_dim ({}) must exceed latent_dim ({}) to hold the latent sphere", self.ambient_dim, self.latent_dim);
        }
        if self.n_models == 0 || self.n_queries == 0 {
            bail!(InvalidArgument, "n_models and n_queries must be >= 1");
        }
        if !(self.lipschitz_l > 0.0 && self.lipschitz_l.is_finite()) {
            bail!(InvalidArgument, "lipschitz_l must be positive and finite, got {}", self.lipschitz_l);
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            bail!(InvalidArgument, "noise_sd must be >= 0, got {}", self.noise_sd);
        }
        Ok(())
    }

    /// Constant per-call cost of model `m`.
    pub fn model_cost(&self, m: usize) -> f64 {
        (m + 1) as f64 / self.n_models as f64
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = libm::sqrt(dot(&v, &v));
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// One model's score surface:
/// `clamp(base + a (w . z) + c sin(FREQUENCY (v . z) + phase), 0, 1)`
/// with `a = L/2` and `c FREQUENCY = L/2`.
struct Surface {
    base: f64,
    w: Vec<f64>,
    v: Vec<f64>,
    phase: f64,
}

impl Surface {
    fn eval(&self, z: &[f64], l: f64) -> f64 {
        let affine = 0.5 * l * dot(&self.w, z);
        let wave = 0.5 * l / FREQUENCY * libm::sin(FREQUENCY * dot(&self.v, z) + self.phase);
        (self.base + affine + wave).clamp(0.0, 1.0)
    }
}

/// Generates a seeded benchmark. Latent points are uniform on the
/// `latent_dim`-sphere and mapped into `ambient_dim` by a random isometry,
/// so embedding distances equal latent distances. More expensive models
/// have higher base scores.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<RoutingDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ld = config.latent_dim + 1;
    let g = DMatrix::from_fn(config.ambient_dim, ld, |_, _| rng.sample::<f64, _>(StandardNormal));
    let frame = g.qr().q();

    let surfaces: Vec<Surface> = (0..config.n_models)
        .map(|m| {
            let rank = if config.n_models > 1 { m as f64 / (config.n_models - 1) as f64 } else { 0.5 };
            Surface {
                base: 0.35 + 0.3 * rank,
                w: gaussian_unit(&mut rng, ld),
                v: gaussian_unit(&mut rng, ld),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let entries = (0..config.n_models)
        .map(|m| {
            let price = config.model_cost(m) * 1e6 / (2 * TOKENS) as f64;
            Ok(CatalogEntry {
                id: ModelId::new(format!("syn-m{m}"))?,
                pricing: Pricing::new(price, price)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(config.n_queries);
    for i in 0..config.n_queries {
        let z = gaussian_unit(&mut rng, ld);
        let x: Vec<f64> = (0..config.ambient_dim).map(|r| (0..ld).map(|c| frame[(r, c)] * z[c]).sum()).collect();
        let outcomes = surfaces
            .iter()
            .enumerate()
            .map(|(m, s)| {
                let mut score = s.eval(&z, config.lipschitz_l);
                if config.noise_sd > 0.0 {
                    score = (score + config.noise_sd * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
                }
                let mut o = Outcome::new(score, config.model_cost(m))?;
                o.input_tokens = Some(TOKENS);
                o.output_tokens = Some(TOKENS);
                Ok(o)
            })
            .collect::<Result<Vec<_>>>()?;
        let embedding = Embedding::new(x)?.normalized().ok_or_else(|| crate::Error::Numerical("degenerate synthetic embedding".into()))?;
        records.push(QueryRecord {
            id: format!("s{i:05}"),
            embedding,
            outcomes,
        });
    }
    let meta = format!(
        "synthetic latent_dim={} ambient_dim={} n_models={} L={} noise_sd={} seed={}",
        config.latent_dim, config.ambient_dim, config.n_models, config.lipschitz_l, config.noise_sd, config.seed
    );
    RoutingDataset::new(ModelCatalog::new(entries)?, records, meta)
}
