//! Domain types shared by every part of the engine.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// Identifier of a candidate model. Compared by exact byte equality.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            bail!(InvalidArgument, "model id must be nonempty");
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ModelId> for String {
    fn from(id: ModelId) -> Self {
        id.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Per-token pricing in USD per one million tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_price: f64,
    pub output_price: f64,
}

impl Pricing {
    pub fn new(input_price: f64, output_price: f64) -> Result<Self> {
        for (name, v) in [("input_price", input_price), ("output_price", output_price)] {
            if !v.is_finite() || v < 0.0 {
                bail!(InvalidArgument, "{name} must be finite and >= 0, got {v}");
            }
        }
        Ok(Self {
            input_price,
            output_price,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: ModelId,
    pub pricing: Pricing,
}

/// Ordered set of candidate models. Catalog order is the final tie-break order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CatalogEntry>", into = "Vec<CatalogEntry>")]
pub struct ModelCatalog {
    entries: Vec<CatalogEntry>,
}

impl ModelCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            bail!(InvalidArgument, "catalog must contain at least one model");
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                bail!(InvalidArgument, "duplicate model id {} in catalog", e.id);
            }
            Pricing::new(e.pricing.input_price, e.pricing.output_price)?;
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn id(&self, index: usize) -> &ModelId {
        &self.entries[index].id
    }

    pub fn pricing(&self, index: usize) -> Pricing {
        self.entries[index].pricing
    }

    pub fn ids(&self) -> impl Iterator<Item = &ModelId> {
        self.entries.iter().map(|e| &e.id)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id.as_str() == name)
    }
}

impl TryFrom<Vec<CatalogEntry>> for ModelCatalog {
    type Error = Error;
    fn try_from(entries: Vec<CatalogEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<ModelCatalog> for Vec<CatalogEntry> {
    fn from(c: ModelCatalog) -> Self {
        c.entries
    }
}

/// Query embedding: a nonempty vector of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            bail!(InvalidArgument, "embedding must have positive dimension");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            bail!(InvalidArgument, "embedding entry {i} is not finite");
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.0)
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Returns the L2-normalized copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n == 0.0 {
            return None;
        }
        Some(Self(self.0.iter().map(|v| v / n).collect()))
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Observed score and cost of one model on one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub score: f64,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl Outcome {
    pub fn new(score: f64, cost: f64) -> Result<Self> {
        let o = Self {
            score,
            cost,
            input_tokens: None,
            output_tokens: None,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.score.is_finite() {
            bail!(InvalidData, "score must be finite");
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            bail!(InvalidData, "cost must be finite and >= 0, got {}", self.cost);
        }
        Ok(())
    }
}

/// One query with its embedding and the outcome of every catalog model,
/// stored in catalog order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub embedding: Embedding,
    pub outcomes: Vec<Outcome>,
}

impl QueryRecord {
    pub fn outcome(&self, model: usize) -> &Outcome {
        &self.outcomes[model]
    }
}

/// A benchmark: catalog plus a complete query × model outcome matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDataset {
    catalog: ModelCatalog,
    records: Vec<QueryRecord>,
    dim: usize,
    pub meta: String,
}

impl RoutingDataset {
    pub fn new(catalog: ModelCatalog, records: Vec<QueryRecord>, meta: impl Into<String>) -> Result<Self> {
        let Some(first) = records.first() else {
            bail!(InvalidArgument, "dataset must contain at least one record");
        };
        let dim = first.embedding.dim();
        let mut ids = BTreeSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                bail!(Schema, "duplicate record id {}", r.id);
            }
            if r.embedding.dim() != dim {
                bail!(
                    Schema,
                    "record {} has embedding dimension {} but dataset dimension is {}",
                    r.id,
                    r.embedding.dim(),
                    dim
                );
            }
            if r.outcomes.len() != catalog.len() {
                bail!(
                    Schema,
                    "record {} has {} outcomes for a {}-model catalog",
                    r.id,
                    r.outcomes.len(),
                    catalog.len()
                );
            }
            for (m, o) in r.outcomes.iter().enumerate() {
                o.validate().map_err(|e| {
                    Error::Schema(alloc::format!("record {} model {}: {e}", r.id, catalog.id(m)))
                })?;
            }
        }
        Ok(Self {
            catalog,
            records,
            dim,
            meta: meta.into(),
        })
    }

    pub fn catalog(&self) -> &ModelCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_models(&self) -> usize {
        self.catalog.len()
    }

    /// New dataset holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.catalog.clone(), records, self.meta.clone())
    }

    /// The first `n` records.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            bail!(InvalidArgument, "requested {n} records from a dataset of {}", self.len());
        }
        Self::new(self.catalog.clone(), self.records[..n].to_vec(), self.meta.clone())
    }

    pub(crate) fn records_mut(&mut self) -> &mut [QueryRecord] {
        &mut self.records
    }
}

/// Named cost-performance trade-off setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    LowCost,
    Balanced,
    HighPerformance,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::LowCost, Preset::Balanced, Preset::HighPerformance];

    /// Multiplier of `1 / c_max`.
    pub fn weight(self) -> f64 {
        match self {
            Preset::LowCost => 1.0,
            Preset::Balanced => 0.5,
            Preset::HighPerformance => 0.1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::LowCost => "low_cost",
            Preset::Balanced => "balanced",
            Preset::HighPerformance => "high_performance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low_cost" => Ok(Preset::LowCost),
            "balanced" => Ok(Preset::Balanced),
            "high_performance" => Ok(Preset::HighPerformance),
            other => bail!(
                InvalidArgument,
                "unknown preset {other:?}; expected low_cost, balanced or high_performance"
            ),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either an explicit trade-off weight or a preset resolved against `c_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Lambda(f64),
    Preset(Preset),
}

impl Preference {
    pub fn resolve(self, c_max: f64) -> Result<f64> {
        match self {
            Preference::Lambda(l) => {
                if !l.is_finite() || l < 0.0 {
                    bail!(InvalidArgument, "lambda must be finite and >= 0, got {l}");
                }
                Ok(l)
            }
            Preference::Preset(p) => crate::utility::resolve_preset(p, c_max),
        }
    }
}

impl Default for Preference {
    fn default() -> Self {
        Preference::Preset(Preset::Balanced)
    }
}

/// Predicted (score, cost) per catalog model, in catalog order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub scores: Vec<f64>,
    pub costs: Vec<f64>,
}

impl UtilityEstimate {
    pub fn new(scores: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        if scores.len() != costs.len() {
            bail!(InvalidArgument, "score and cost estimates differ in length");
        }
        if scores.iter().chain(&costs).any(|v| !v.is_finite()) {
            bail!(Numerical, "utility estimate contains a non-finite value");
        }
        Ok(Self { scores, costs })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Estimate equal to the true outcomes of a record.
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        Self {
            scores: outcomes.iter().map(|o| o.score).collect(),
            costs: outcomes.iter().map(|o| o.cost).collect(),
        }
    }

    pub fn best_model<'c>(&self, catalog: &'c ModelCatalog, lambda: f64) -> Result<&'c ModelId> {
        if self.len() != catalog.len() {
            bail!(InvalidArgument, "estimate covers {} models, catalog has {}", self.len(), catalog.len());
        }
        Ok(catalog.id(crate::utility::argmax_utility(self, lambda)?))
    }
}
