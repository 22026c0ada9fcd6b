//! Fixture builders shared by unit tests.

use alloc::format;
use alloc::vec::Vec;

use crate::types::{CatalogEntry, Embedding, ModelCatalog, ModelId, Outcome, Pricing, QueryRecord, RoutingDataset};

pub fn catalog(n: usize) -> ModelCatalog {
    ModelCatalog::new(
        (0..n)
            .map(|i| CatalogEntry {
                id: ModelId::new(format!("{}", (b'A' + i as u8) as char)).unwrap(),
                pricing: Pricing::new(1.0 + i as f64, 2.0 + i as f64).unwrap(),
            })
            .collect(),
    )
    .unwrap()
}

/// Dataset with ids q0, q1, ... and (score, cost) outcomes per model.
pub fn toy_dataset(embeddings: &[Vec<f64>], outcomes: &[&[(f64, f64)]]) -> RoutingDataset {
    let n_models = outcomes[0].len();
    let records = embeddings
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (e, o))| QueryRecord {
            id: format!("q{i}"),
            embedding: Embedding::new(e.clone()).unwrap(),
            outcomes: o.iter().map(|&(s, c)| Outcome::new(s, c).unwrap()).collect(),
        })
        .collect();
    RoutingDataset::new(catalog(n_models), records, "toy").unwrap()
}
