//! Catalog (TOML), dataset and embedding (JSON lines) files, and split manifests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use llmroute_core::data::{compute_cost, Split};
use llmroute_core::{CatalogEntry, Embedding, ModelCatalog, ModelId, Outcome, Pricing, QueryRecord, RoutingDataset};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{read_to_string, write_atomic, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    models: Vec<CatalogModel>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogModel {
    name: String,
    /// USD per million input tokens.
    input_price: f64,
    /// USD per million output tokens.
    output_price: f64,
}

/// Parses a catalog document: a `[[models]]` array whose order is the
/// catalog (and tie-break) order.
pub fn parse_catalog(text: &str) -> Result<ModelCatalog> {
    let file: CatalogFile = toml::from_str(text).map_err(|e| Error::Schema(format!("catalog: {e}")))?;
    let entries = file
        .models
        .into_iter()
        .map(|m| {
            Ok(CatalogEntry {
                id: ModelId::new(m.name)?,
                pricing: Pricing::new(m.input_price, m.output_price)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelCatalog::new(entries)?)
}

pub fn load_catalog(path: &Path) -> Result<ModelCatalog> {
    parse_catalog(&read_to_string(path)?).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn catalog_to_toml(catalog: &ModelCatalog) -> String {
    let file = CatalogFile {
        models: catalog
            .entries()
            .iter()
            .map(|e| CatalogModel {
                name: e.id.as_str().to_string(),
                input_price: e.pricing.input_price,
                output_price: e.pricing.output_price,
            })
            .collect(),
    };
    toml::to_string(&file).expect("catalog serializes")
}

pub fn save_catalog(path: &Path, catalog: &ModelCatalog) -> Result<()> {
    write_atomic(path, catalog_to_toml(catalog).as_bytes())
}

/// First line of a dataset file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    #[serde(default)]
    pub meta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutcome {
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_tokens: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
    outcomes: BTreeMap<String, RawOutcome>,
}

/// Non-empty lines with their 1-based line numbers, split into an optional
/// header (a first object without an `id` field) and the rest.
fn json_lines<'a>(text: &'a str, path: &Path) -> Result<(Option<(usize, Value)>, Vec<(usize, &'a str)>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).peekable();
    let mut header = None;
    if let Some(&(no, first)) = lines.peek() {
        let v: Value = serde_json::from_str(first).map_err(|e| Error::parse(path, no, e))?;
        if v.get("id").is_none() {
            header = Some((no, v));
            lines.next();
        }
    }
    Ok((header, lines.collect()))
}

fn build_outcome(record: &str, model: &ModelId, pricing: Pricing, raw: RawOutcome) -> Result<Outcome> {
    let cost = match (raw.cost, raw.input_tokens, raw.output_tokens) {
        (Some(c), _, _) => c,
        (None, Some(i), Some(o)) => compute_cost(i, o, pricing),
        _ => return Err(Error::Schema(format!("record {record} outcome for {model} needs a cost or both token counts"))),
    };
    let mut o = Outcome::new(raw.score, cost).map_err(|e| Error::Schema(format!("record {record} outcome for {model}: {e}")))?;
    o.input_tokens = raw.input_tokens;
    o.output_tokens = raw.output_tokens;
    Ok(o)
}

/// Parses dataset lines against `catalog`. Records without an inline
/// embedding take theirs from `embeddings`; costs missing but derivable
/// from token counts are computed from catalog prices.
pub fn parse_dataset(text: &str, path: &Path, catalog: &ModelCatalog, embeddings: Option<&EmbeddingTable>) -> Result<RoutingDataset> {
    let (header, lines) = json_lines(text, path)?;
    let header: DatasetHeader = match header {
        Some((no, v)) => serde_json::from_value(v).map_err(|e| Error::parse(path, no, format!("dataset header: {e}")))?,
        None => DatasetHeader::default(),
    };
    let known: HashSet<&str> = catalog.ids().map(|i| i.as_str()).collect();
    let mut records = Vec::with_capacity(lines.len());
    for (no, line) in lines {
        let mut raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::parse(path, no, e))?;
        if let Some(unknown) = raw.outcomes.keys().find(|k| !known.contains(k.as_str())) {
            return Err(Error::Schema(format!("record {} has an outcome for unknown model {unknown}", raw.id)));
        }
        let mut outcomes = Vec::with_capacity(catalog.len());
        for (m, entry) in catalog.entries().iter().enumerate() {
            let Some(o) = raw.outcomes.remove(entry.id.as_str()) else {
                return Err(Error::Schema(format!("record {} missing outcome for {}", raw.id, entry.id)));
            };
            outcomes.push(build_outcome(&raw.id, &entry.id, catalog.pricing(m), o)?);
        }
        let values = match (raw.embedding, embeddings) {
            (Some(e), _) => e,
            (None, Some(table)) => table
                .get(&raw.id)
                .ok_or_else(|| Error::Schema(format!("record {} has no embedding in the dataset or the embedding file", raw.id)))?
                .to_vec(),
            (None, None) => return Err(Error::Schema(format!("record {} has no embedding", raw.id))),
        };
        let embedding = Embedding::new(values).map_err(|e| Error::Schema(format!("record {}: {e}", raw.id)))?;
        records.push(QueryRecord { id: raw.id, embedding, outcomes });
    }
    let ds = RoutingDataset::new(catalog.clone(), records, header.meta)?;
    if let Some(dim) = header.dim.filter(|&d| d != ds.dim()) {
        return Err(Error::Schema(format!("{}: header declares dim {dim} but records have dim {}", path.display(), ds.dim())));
    }
    Ok(ds)
}

pub fn load_dataset(dataset_path: &Path, catalog_path: &Path) -> Result<RoutingDataset> {
    let catalog = load_catalog(catalog_path)?;
    parse_dataset(&read_to_string(dataset_path)?, dataset_path, &catalog, None)
}

/// Loads a dataset whose records take their embeddings from a separate
/// embedding file (as written by the embedder).
pub fn load_dataset_with_embeddings(dataset_path: &Path, catalog_path: &Path, embeddings_path: &Path) -> Result<RoutingDataset> {
    let catalog = load_catalog(catalog_path)?;
    let table = load_embeddings(embeddings_path)?;
    parse_dataset(&read_to_string(dataset_path)?, dataset_path, &catalog, Some(&table))
}

/// Canonical dataset text: a header line, then one record per line with
/// outcomes keyed by model name.
pub fn dataset_to_jsonl(dataset: &RoutingDataset) -> String {
    let header = DatasetHeader { meta: dataset.meta.clone(), dim: Some(dataset.dim()) };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in dataset.records() {
        let raw = RawRecord {
            id: r.id.clone(),
            embedding: Some(r.embedding.as_slice().to_vec()),
            outcomes: dataset
                .catalog()
                .ids()
                .zip(&r.outcomes)
                .map(|(id, o)| {
                    (
                        id.as_str().to_string(),
                        RawOutcome { score: o.score, cost: Some(o.cost), input_tokens: o.input_tokens, output_tokens: o.output_tokens },
                    )
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, dataset: &RoutingDataset) -> Result<()> {
    write_atomic(path, dataset_to_jsonl(dataset).as_bytes())
}

/// Header line of an embedding file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    #[serde(default)]
    pub encoder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    pub dim: usize,
    #[serde(default)]
    pub normalized: bool,
}

#[derive(Debug, Deserialize)]
struct EmbeddingRow {
    id: String,
    embedding: Vec<f64>,
}

/// Embeddings keyed by record id, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub header: EmbeddingHeader,
    pub ids: Vec<String>,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let (header, lines) = json_lines(text, path)?;
    let Some((hno, hv)) = header else {
        return Err(Error::Schema(format!("{}: embedding file lacks a header line", path.display())));
    };
    let header: EmbeddingHeader = serde_json::from_value(hv).map_err(|e| Error::parse(path, hno, format!("embedding header: {e}")))?;
    let mut ids = Vec::with_capacity(lines.len());
    let mut rows = HashMap::with_capacity(lines.len());
    for (no, line) in lines {
        let row: EmbeddingRow = serde_json::from_str(line).map_err(|e| Error::parse(path, no, e))?;
        if row.embedding.len() != header.dim {
            return Err(Error::Schema(format!("embedding {} has dim {} but the header declares {}", row.id, row.embedding.len(), header.dim)));
        }
        if rows.contains_key(&row.id) {
            return Err(Error::Schema(format!("duplicate embedding id {}", row.id)));
        }
        ids.push(row.id.clone());
        rows.insert(row.id, row.embedding);
    }
    Ok(EmbeddingTable { header, ids, rows })
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(&read_to_string(path)?, path)
}

/// Record ids of one split part, with what is needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub part: String,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub config_hash: String,
    pub ids: Vec<String>,
}

pub const SPLIT_PARTS: [&str; 3] = ["train", "val", "test"];

pub fn manifest_path(dir: &Path, part: &str) -> PathBuf {
    dir.join(format!("{part}.json"))
}

/// Writes `train.json`, `val.json` and `test.json` into `dir`.
pub fn write_split_manifests(dir: &Path, split: &Split, config_hash: &str) -> Result<Vec<PathBuf>> {
    let parts = [&split.train, &split.val, &split.test];
    SPLIT_PARTS
        .iter()
        .zip(parts)
        .map(|(name, ds)| {
            let m = SplitManifest {
                part: name.to_string(),
                seed: split.spec.seed,
                fractions: [split.spec.train_frac, split.spec.val_frac, split.spec.test_frac],
                config_hash: config_hash.to_string(),
                ids: ds.records().iter().map(|r| r.id.clone()).collect(),
            };
            let path = manifest_path(dir, name);
            let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
            text.push('\n');
            write_atomic(&path, text.as_bytes())?;
            Ok(path)
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::parse(path, e.line(), e))
}

/// The records of `dataset` named by `ids`, in manifest order.
pub fn subset_by_ids(dataset: &RoutingDataset, ids: &[String]) -> Result<RoutingDataset> {
    let pos: HashMap<&str, usize> = dataset.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let idx = ids
        .iter()
        .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::Schema(format!("manifest id {id} is not in the dataset"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(dataset.subset(&idx)?)
}
