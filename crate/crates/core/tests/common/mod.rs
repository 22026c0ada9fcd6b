#![allow(dead_code)]

use llmroute_core::{CatalogEntry, Embedding, ModelCatalog, ModelId, Outcome, Pricing, QueryRecord, RoutingDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn catalog(n: usize) -> ModelCatalog {
    ModelCatalog::new(
        (0..n)
            .map(|i| CatalogEntry {
                id: ModelId::new(format!("m{i}")).unwrap(),
                pricing: Pricing::new(1.0 + i as f64, 2.0 + i as f64).unwrap(),
            })
            .collect(),
    )
    .unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Dataset whose outcomes are `f(embedding, model) -> (score, cost)`.
pub fn planted(n: usize, dim: usize, n_models: usize, seed: u64, f: impl Fn(&[f64], usize) -> (f64, f64)) -> RoutingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let e = random_unit(&mut rng, dim);
            let outcomes = (0..n_models)
                .map(|m| {
                    let (s, c) = f(&e, m);
                    Outcome::new(s, c).unwrap()
                })
                .collect();
            QueryRecord {
                id: format!("q{i:04}"),
                embedding: Embedding::new(e).unwrap(),
                outcomes,
            }
        })
        .collect();
    RoutingDataset::new(catalog(n_models), records, "planted").unwrap()
}
