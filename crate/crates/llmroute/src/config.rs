//! The run configuration: one TOML document driving split, fit, eval,
//! analysis and serving.

use std::path::{Path, PathBuf};

use llmroute_core::analysis::SyntheticConfig;
use llmroute_core::data::SplitSpec;
use llmroute_core::routers::{Architecture, Formulation, RouterConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::persist::content_hash;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub catalog: PathBuf,
    /// Separate embedding file joined to the dataset by record id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// L2-normalize embeddings after loading.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self { seed: s.seed, train_frac: s.train_frac, val_frac: s.val_frac, test_frac: s.test_frac }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec { train_frac: self.train_frac, val_frac: self.val_frac, test_frac: self.test_frac, seed: self.seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterEntry {
    /// File stem for this router's outputs.
    pub name: String,
    pub arch: String,
    #[serde(default = "utility")]
    pub formulation: String,
    /// kNN only: pick `k` from these by validation AUC.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_candidates: Vec<usize>,
    #[serde(default)]
    pub params: RouterConfig,
}

fn utility() -> String {
    "utility".into()
}

impl RouterEntry {
    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::parse(&self.arch).map_err(|e| Error::Usage(format!("router {}: {e}", self.name)))
    }

    pub fn formulation(&self) -> Result<Formulation> {
        match self.formulation.as_str() {
            "utility" => Ok(Formulation::Utility),
            "selection" => Ok(Formulation::Selection),
            other => Err(Error::Usage(format!("router {}: unknown formulation {other:?}; expected utility or selection", self.name))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Lambda sweep and Pareto AUC.
    Auc,
    /// Mean utility at the three preference presets.
    Selection,
    /// AUC for utility routers, presets for selection routers.
    #[default]
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Log-spaced lambda points after the leading zero.
    pub grid_points: usize,
    pub protocol: Protocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { grid_points: llmroute_core::eval::GRID_POINTS, protocol: Protocol::Auto }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalityConfig {
    pub n_pairs: usize,
    pub bins: usize,
    pub tau: Option<f64>,
    pub seed: u64,
}

impl Default for LocalityConfig {
    fn default() -> Self {
        Self { n_pairs: 5000, bins: 10, tau: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonConfig {
    pub deltas: Vec<f64>,
    pub quantile: f64,
    pub lambda: f64,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        Self { deltas: vec![0.05, 0.1, 0.2, 0.4, 0.8], quantile: llmroute_core::analysis::EPSILON_QUANTILE, lambda: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoveringConfig {
    pub radii: Vec<f64>,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self { radii: vec![0.05, 0.1, 0.2, 0.4, 0.8] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretConfig {
    pub train_sizes: Vec<usize>,
    pub k: usize,
    /// Trade-off weight; `None` uses the balanced preset of the synthetic benchmark.
    pub lambda: Option<f64>,
    pub trials: usize,
    pub archs: Vec<String>,
    pub test_size: usize,
    pub gradient_budget: Option<usize>,
    pub params: RouterConfig,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            train_sizes: vec![50, 100, 200, 400, 800],
            k: 5,
            lambda: None,
            trials: 5,
            archs: vec!["knn".into(), "mlp".into()],
            test_size: 200,
            gradient_budget: Some(100_000),
            params: RouterConfig { learning_rate: 0.1, batch_size: 32, ..RouterConfig::default() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Analyze a generated benchmark instead of `[data]`.
    pub synthetic: Option<SyntheticConfig>,
    pub locality: LocalityConfig,
    pub epsilon: EpsilonConfig,
    pub covering: CoveringConfig,
    pub regret: RegretConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
    /// Name of the `[[routers]]` entry to serve.
    pub router: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), router: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub routers: Vec<RouterEntry>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub serve: ServeConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            split: SplitConfig::default(),
            routers: Vec::new(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
            serve: ServeConfig::default(),
            out: default_out(),
        }
    }
}

/// A parsed config with the directory its relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` overrides to a TOML table. Values parse as TOML
/// literals and fall back to plain strings.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| Error::Usage(format!("override {o:?} is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Usage(format!("override {o:?} has an empty key segment")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry.as_table_mut().ok_or_else(|| Error::Usage(format!("override {o:?}: {p} is not a table")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl LoadedConfig {
    /// Parses `text` after applying overrides.
    pub fn parse(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(Self { config, base_dir: base_dir.to_path_buf() })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, overrides)
    }

    /// Defaults plus overrides, for commands run without a config file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        Self::parse("", Path::new(""), overrides)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out)
    }

    /// SHA-256 of the canonical serialization of the effective config,
    /// ignoring the output directory.
    pub fn hash(&self) -> String {
        let c = RunConfig { out: PathBuf::new(), ..self.config.clone() };
        content_hash(toml::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.config.data.as_ref().ok_or_else(|| Error::Usage("config has no [data] section (dataset and catalog paths)".into()))
    }

    /// Checks that every path the data section names exists.
    pub fn check_data_paths(&self) -> Result<()> {
        let d = self.data()?;
        for p in [Some(&d.dataset), Some(&d.catalog), d.embeddings.as_ref()].into_iter().flatten() {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(Error::Config(format!("referenced path {} does not exist", full.display())));
            }
        }
        Ok(())
    }

    pub fn validate_routers(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for r in &self.config.routers {
            r.architecture()?;
            r.formulation()?;
            r.params.validate().map_err(|e| Error::Usage(format!("router {}: {e}", r.name)))?;
            if r.name.is_empty() || r.name.contains(['/', '\\']) || !names.insert(r.name.as_str()) {
                return Err(Error::Usage(format!("router name {:?} is empty, contains a path separator or is duplicated", r.name)));
            }
        }
        Ok(())
    }
}
