//! The subcommands behind the CLI: split, fit, eval, analyze, report and run.
//! Every output lands under the configured output directory and records the
//! config hash and seed.

use std::path::{Path, PathBuf};

use llmroute_core::analysis::{
    aggregate_trials, covering_number, covering_slope, generate_synthetic, locality_curve, regret_trial, LocalityCurve, PairSample, RegretCurve,
    RegretSetup, SyntheticConfig, EXHAUSTIVE_LIMIT,
};
use llmroute_core::data::{c_max, normalize_embeddings, split_dataset};
use llmroute_core::eval::{
    lambda_grid, oracle_curve, oracle_selection, random_curve, random_selection, router_curve, selection_eval, tune_knn_k, EvalNorm,
};
use llmroute_core::routers::{fit, Architecture, FittedRouter, Formulation, TrainingLog};
use llmroute_core::utility::resolve_preset;
use llmroute_core::{Preset, RoutingDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, Protocol, RouterEntry};
use crate::dataio::{load_catalog, load_dataset, load_dataset_with_embeddings, manifest_path, read_manifest, subset_by_ids, write_split_manifests};
use crate::error::{write_atomic, Error, Result};
use crate::persist::{load_router, save_router};
use crate::report::{AucRow, AucSection, EvalReport, SelectionRow, SelectionSection, RESULTS_FILE};

pub fn split_dir(cfg: &LoadedConfig) -> PathBuf {
    cfg.out_dir().join("split")
}

pub fn routers_dir(cfg: &LoadedConfig) -> PathBuf {
    cfg.out_dir().join("routers")
}

pub fn eval_dir(cfg: &LoadedConfig) -> PathBuf {
    cfg.out_dir().join("eval")
}

pub fn analysis_dir(cfg: &LoadedConfig) -> PathBuf {
    cfg.out_dir().join("analysis")
}

/// Loads the configured dataset, joining embeddings and normalizing as asked.
pub fn load_full_dataset(cfg: &LoadedConfig) -> Result<RoutingDataset> {
    cfg.check_data_paths()?;
    let d = cfg.data()?;
    let (dataset, catalog) = (cfg.resolve(&d.dataset), cfg.resolve(&d.catalog));
    let ds = match &d.embeddings {
        Some(e) => load_dataset_with_embeddings(&dataset, &catalog, &cfg.resolve(e))?,
        None => load_dataset(&dataset, &catalog)?,
    };
    Ok(if d.normalize { normalize_embeddings(&ds)? } else { ds })
}

pub fn cmd_split(cfg: &LoadedConfig) -> Result<Vec<PathBuf>> {
    let ds = load_full_dataset(cfg)?;
    let split = split_dataset(&ds, &cfg.config.split.spec())?;
    let paths = write_split_manifests(&split_dir(cfg), &split, &cfg.hash())?;
    tracing::info!(train = split.train.len(), val = split.val.len(), test = split.test.len(), "wrote split manifests");
    Ok(paths)
}

/// The full dataset and its train, val and test parts from the manifests.
pub struct SplitData {
    pub full: RoutingDataset,
    pub train: RoutingDataset,
    pub val: RoutingDataset,
    pub test: RoutingDataset,
}

pub fn load_split(cfg: &LoadedConfig) -> Result<SplitData> {
    let full = load_full_dataset(cfg)?;
    let dir = split_dir(cfg);
    let mut parts = Vec::with_capacity(3);
    for part in ["train", "val", "test"] {
        let p = manifest_path(&dir, part);
        if !p.exists() {
            return Err(Error::Usage(format!("split manifest {} not found; run `llmroute split` first", p.display())));
        }
        parts.push(subset_by_ids(&full, &read_manifest(&p)?.ids)?);
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(SplitData { full, train, val, test })
}

/// Router files of a config entry: one for a utility router, one per preset
/// (low_cost, balanced, high_performance) for a selection router.
pub fn router_paths(cfg: &LoadedConfig, entry: &RouterEntry) -> Result<Vec<PathBuf>> {
    let dir = routers_dir(cfg);
    Ok(match entry.formulation()? {
        Formulation::Utility => vec![dir.join(format!("{}.json", entry.name))],
        Formulation::Selection => Preset::ALL.iter().map(|p| dir.join(format!("{}.{}.json", entry.name, p.name()))).collect(),
    })
}

pub fn log_path(cfg: &LoadedConfig, entry: &RouterEntry) -> PathBuf {
    routers_dir(cfg).join(format!("{}.log.json", entry.name))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedFile {
    pub file: String,
    pub version: String,
    pub selection_lambda: Option<f64>,
    pub log: TrainingLog,
}

/// Contents of `<name>.log.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub config_hash: String,
    pub seed: u64,
    pub name: String,
    pub arch: Architecture,
    pub formulation: Formulation,
    /// kNN `k` chosen on the validation set and its validation AUC.
    pub tuned_k: Option<(usize, f64)>,
    pub routers: Vec<FittedFile>,
}

fn selected<'a>(cfg: &'a LoadedConfig, only: Option<&str>) -> Result<Vec<&'a RouterEntry>> {
    cfg.validate_routers()?;
    if cfg.config.routers.is_empty() {
        return Err(Error::Usage("config has no [[routers]] entries".into()));
    }
    match only {
        None => Ok(cfg.config.routers.iter().collect()),
        Some(name) => cfg
            .config
            .routers
            .iter()
            .find(|r| r.name == name)
            .map(|r| vec![r])
            .ok_or_else(|| Error::Usage(format!("no router named {name:?} in config"))),
    }
}

fn fit_entry(cfg: &LoadedConfig, entry: &RouterEntry, data: &SplitData, hash: &str) -> Result<FitLog> {
    let arch = entry.architecture()?;
    let formulation = entry.formulation()?;
    let cm = c_max(&data.full);
    if !entry.k_candidates.is_empty() && !(arch == Architecture::Knn && formulation == Formulation::Utility) {
        return Err(Error::Usage(format!("router {}: k_candidates applies to knn utility routers only", entry.name)));
    }
    let mut fitted: Vec<(FittedRouter, Option<f64>)> = Vec::new();
    let mut tuned_k = None;
    match formulation {
        Formulation::Utility if !entry.k_candidates.is_empty() => {
            let grid = lambda_grid(cm, cfg.config.eval.grid_points)?;
            let norm = EvalNorm::from_test(&data.val, cm)?;
            let (k, auc, r) = tune_knn_k(&data.train, &data.val, &entry.k_candidates, &entry.params, &grid, &norm)?;
            tuned_k = Some((k, auc));
            fitted.push((r, None));
        }
        Formulation::Utility => fitted.push((fit(arch, formulation, &data.train, Some(&data.val), None, &entry.params)?, None)),
        Formulation::Selection => {
            for p in Preset::ALL {
                let lambda = resolve_preset(p, cm)?;
                fitted.push((fit(arch, formulation, &data.train, Some(&data.val), Some(lambda), &entry.params)?, Some(lambda)));
            }
        }
    }
    let paths = router_paths(cfg, entry)?;
    let mut files = Vec::with_capacity(paths.len());
    for ((mut router, lambda), path) in fitted.into_iter().zip(&paths) {
        router.c_max = cm;
        let version = save_router(path, &router, Some(hash))?;
        files.push(FittedFile {
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            version,
            selection_lambda: lambda,
            log: router.log.clone(),
        });
    }
    let log = FitLog {
        config_hash: hash.to_string(),
        seed: entry.params.seed,
        name: entry.name.clone(),
        arch,
        formulation,
        tuned_k,
        routers: files,
    };
    let mut text = serde_json::to_string_pretty(&log).map_err(|e| Error::Runtime(e.to_string()))?;
    text.push('\n');
    write_atomic(&log_path(cfg, entry), text.as_bytes())?;
    Ok(log)
}

fn remove_outputs(cfg: &LoadedConfig, entry: &RouterEntry) {
    let mut paths = router_paths(cfg, entry).unwrap_or_default();
    paths.push(log_path(cfg, entry));
    for p in paths {
        let _ = std::fs::remove_file(&p);
        let mut tmp = p.into_os_string();
        tmp.push(".tmp");
        let _ = std::fs::remove_file(tmp);
    }
}

/// Fits every configured router, or only `only`. A failed fit leaves no
/// files behind for that router.
pub fn cmd_fit(cfg: &LoadedConfig, only: Option<&str>) -> Result<Vec<FitLog>> {
    let entries = selected(cfg, only)?;
    let data = load_split(cfg)?;
    let hash = cfg.hash();
    let mut logs = Vec::with_capacity(entries.len());
    for entry in entries {
        match fit_entry(cfg, entry, &data, &hash) {
            Ok(log) => {
                tracing::info!(router = %entry.name, files = log.routers.len(), "fitted");
                logs.push(log);
            }
            Err(e) => {
                remove_outputs(cfg, entry);
                return Err(e);
            }
        }
    }
    Ok(logs)
}

fn load_entry_routers(cfg: &LoadedConfig, entry: &RouterEntry) -> Result<Vec<(FittedRouter, String)>> {
    router_paths(cfg, entry)?
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(Error::Usage(format!("router file {} not found; run `llmroute fit` first", p.display())));
            }
            load_router(p)
        })
        .collect()
}

pub fn cmd_eval(cfg: &LoadedConfig) -> Result<EvalReport> {
    let entries = selected(cfg, None)?;
    let protocol = cfg.config.eval.protocol;
    let mut auc_entries = Vec::new();
    let mut sel_entries = Vec::new();
    for e in entries {
        match (e.formulation()?, protocol) {
            (Formulation::Selection, Protocol::Auc) => {
                return Err(Error::Usage(format!("router {} is a selection router; the auc protocol needs a utility router", e.name)));
            }
            (Formulation::Utility, Protocol::Auc | Protocol::Auto) => auc_entries.push(e),
            _ => sel_entries.push(e),
        }
    }
    let data = load_split(cfg)?;
    let test = &data.test;
    let cm = c_max(&data.full);
    let norm = EvalNorm::from_test(test, cm)?;
    let grid = lambda_grid(cm, cfg.config.eval.grid_points)?;

    let auc = if auc_entries.is_empty() {
        None
    } else {
        let mut rows = vec![
            AucRow::from_curve("oracle", None, &oracle_curve(test, &grid, &norm)?),
            AucRow::from_curve("random", None, &random_curve(test, &norm)?),
        ];
        let routed: Vec<AucRow> = auc_entries
            .par_iter()
            .map(|e| {
                let (router, version) = load_entry_routers(cfg, e)?.pop().unwrap();
                Ok(AucRow::from_curve(&e.name, Some(version), &router_curve(&router, test, &grid, &norm)?))
            })
            .collect::<Result<_>>()?;
        rows.extend(routed);
        Some(AucSection { grid: grid.clone(), rows })
    };

    let selection = if sel_entries.is_empty() {
        None
    } else {
        let mut rows = vec![
            SelectionRow::from_report("oracle", None, oracle_selection(test, cm)?),
            SelectionRow::from_report("random", None, random_selection(test, cm)?),
        ];
        let routed: Vec<SelectionRow> = sel_entries
            .par_iter()
            .map(|e| {
                let loaded = load_entry_routers(cfg, e)?;
                let versions = loaded.iter().map(|(_, v)| v.clone()).collect();
                let routers: Vec<&FittedRouter> = loaded.iter().map(|(r, _)| r).collect();
                let three = if routers.len() == 3 { [routers[0], routers[1], routers[2]] } else { [routers[0]; 3] };
                Ok(SelectionRow::from_report(&e.name, Some(versions), selection_eval(three, test, cm)?))
            })
            .collect::<Result<_>>()?;
        rows.extend(routed);
        Some(SelectionSection { rows })
    };

    let report = EvalReport {
        config_hash: cfg.hash(),
        seed: cfg.config.split.seed,
        n_test: test.len(),
        c_max: cm,
        norm,
        auc,
        selection,
    };
    report.write(&eval_dir(cfg))?;
    Ok(report)
}

/// Regenerates `table.txt` from an existing `results.json`.
pub fn cmd_report(cfg: &LoadedConfig) -> Result<String> {
    let path = eval_dir(cfg).join(RESULTS_FILE);
    if !path.exists() {
        return Err(Error::Usage(format!("{} not found; run `llmroute eval` first", path.display())));
    }
    let report = EvalReport::load(&path)?;
    let table = report.render_table();
    write_atomic(&eval_dir(cfg).join(crate::report::TABLE_FILE), table.as_bytes())?;
    Ok(table)
}

/// Which analyses `cmd_analyze` runs. All false means every analysis the
/// inputs support.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AnalyzeSelection {
    pub locality: bool,
    pub epsilon: bool,
    pub covering: bool,
    pub regret: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub delta: f64,
    pub pairs_within: usize,
    pub epsilon_hat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringRow {
    pub radius: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "analysis", rename_all = "snake_case")]
pub enum AnalysisBody {
    Locality { curve: LocalityCurve },
    Epsilon { quantile: f64, lambda: f64, n_pairs: usize, exhaustive: bool, rows: Vec<EpsilonRow> },
    Covering { rows: Vec<CoveringRow>, slope: Option<f64> },
    Regret { curve: RegretCurve },
}

/// One analysis output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFile {
    pub config_hash: String,
    pub seed: u64,
    /// `synthetic` or `dataset`.
    pub source: String,
    #[serde(flatten)]
    pub body: AnalysisBody,
}

fn analysis_source(cfg: &LoadedConfig) -> Result<(RoutingDataset, &'static str, u64)> {
    if let Some(s) = &cfg.config.analysis.synthetic {
        return Ok((generate_synthetic(s)?, "synthetic", s.seed));
    }
    if cfg.config.data.is_none() {
        return Err(Error::Usage("analyze needs a [data] section or [analysis.synthetic]".into()));
    }
    Ok((load_full_dataset(cfg)?, "dataset", cfg.config.split.seed))
}

/// Regret experiment with trials run in parallel.
pub fn run_regret(synthetic: &SyntheticConfig, setup: &RegretSetup, quantile: f64) -> Result<RegretCurve> {
    setup.validate(synthetic)?;
    let trials = (0..setup.trials).into_par_iter().map(|t| regret_trial(synthetic, setup, quantile, t)).collect::<llmroute_core::Result<Vec<_>>>()?;
    Ok(aggregate_trials(synthetic, setup, quantile, trials)?)
}

pub fn regret_setup(cfg: &LoadedConfig, synthetic: &SyntheticConfig) -> Result<RegretSetup> {
    let r = &cfg.config.analysis.regret;
    let archs = r.archs.iter().map(|a| Architecture::parse(a)).collect::<llmroute_core::Result<Vec<_>>>()?;
    let lambda = match r.lambda {
        Some(l) => l,
        None => resolve_preset(Preset::Balanced, synthetic.model_cost(synthetic.n_models - 1))?,
    };
    Ok(RegretSetup {
        train_sizes: r.train_sizes.clone(),
        k: r.k,
        lambda,
        trials: r.trials,
        archs,
        test_size: r.test_size,
        router: r.params.clone(),
        gradient_budget: r.gradient_budget,
    })
}

pub fn cmd_analyze(cfg: &LoadedConfig, sel: AnalyzeSelection) -> Result<Vec<PathBuf>> {
    let a = &cfg.config.analysis;
    let all = sel == AnalyzeSelection::default();
    if sel.regret && a.synthetic.is_none() {
        return Err(Error::Usage("the regret experiment needs [analysis.synthetic]".into()));
    }
    let (ds, source, seed) = analysis_source(cfg)?;
    let hash = cfg.hash();
    let dir = analysis_dir(cfg);
    let mut written = Vec::new();
    let mut emit = |name: &str, body: AnalysisBody| -> Result<()> {
        let file = AnalysisFile { config_hash: hash.clone(), seed, source: source.to_string(), body };
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Runtime(e.to_string()))?;
        text.push('\n');
        let path = dir.join(format!("{name}.json"));
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };

    if all || sel.locality {
        let l = &a.locality;
        emit("locality", AnalysisBody::Locality { curve: locality_curve(&ds, l.n_pairs, l.bins, l.tau, l.seed)? })?;
    }
    if all || sel.epsilon {
        let e = &a.epsilon;
        let exhaustive = ds.len() <= EXHAUSTIVE_LIMIT;
        let pairs = if exhaustive { PairSample::all(&ds, e.lambda)? } else { PairSample::sampled(&ds, 1_000_000, e.lambda, 0)? };
        let rows = e
            .deltas
            .iter()
            .map(|&delta| Ok(EpsilonRow { delta, pairs_within: pairs.within(delta), epsilon_hat: pairs.epsilon_hat(delta, e.quantile)? }))
            .collect::<Result<Vec<_>>>()?;
        emit("epsilon", AnalysisBody::Epsilon { quantile: e.quantile, lambda: e.lambda, n_pairs: pairs.len(), exhaustive, rows })?;
    }
    if all || sel.covering {
        let radii = &a.covering.radii;
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Usage("covering radii must be positive and finite".into()));
        }
        let points: Vec<&[f64]> = ds.records().iter().map(|r| r.embedding.as_slice()).collect();
        let counts: Vec<usize> = radii.par_iter().map(|&r| covering_number(&points, r)).collect();
        let slope = (radii.len() >= 2).then(|| covering_slope(radii, &counts));
        let rows = radii.iter().zip(&counts).map(|(&radius, &count)| CoveringRow { radius, count }).collect();
        emit("covering", AnalysisBody::Covering { rows, slope })?;
    }
    if let (true, Some(s)) = (all || sel.regret, &a.synthetic) {
        let setup = regret_setup(cfg, s)?;
        emit("regret", AnalysisBody::Regret { curve: run_regret(s, &setup, a.epsilon.quantile)? })?;
    }
    Ok(written)
}

/// split, fit and eval in one go.
pub fn cmd_run(cfg: &LoadedConfig) -> Result<EvalReport> {
    cmd_split(cfg)?;
    cmd_fit(cfg, None)?;
    cmd_eval(cfg)
}

/// Validates that a catalog file matches a router's catalog.
pub fn check_catalog(router: &FittedRouter, catalog_path: &Path) -> Result<()> {
    let catalog = load_catalog(catalog_path)?;
    if catalog != router.catalog {
        return Err(Error::Config(format!("catalog {} does not match the router's catalog", catalog_path.display())));
    }
    Ok(())
}
