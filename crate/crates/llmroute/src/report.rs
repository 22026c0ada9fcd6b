//! Evaluation reports: `results.json` for machines, `table.txt` for people.

use std::fmt::Write as _;
use std::path::Path;

use llmroute_core::eval::{EvalNorm, ParetoCurve, ParetoPoint, PresetResult, SelectionReport};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_atomic, Error, Result};

pub const RESULTS_FILE: &str = "results.json";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// `None` for the random baseline, which has no lambda.
    pub lambda: Option<f64>,
    pub mean_cost: f64,
    pub mean_score: f64,
    pub on_hull: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub name: String,
    /// Router file version; absent for oracle and random.
    pub router_version: Option<String>,
    pub auc: f64,
    pub points: Vec<CurvePoint>,
    pub hull: Vec<ParetoPoint>,
}

impl AucRow {
    pub fn from_curve(name: &str, router_version: Option<String>, curve: &ParetoCurve) -> Self {
        let points = curve
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| CurvePoint {
                lambda: curve.lambdas.get(i).copied(),
                mean_cost: p.mean_cost,
                mean_score: p.mean_score,
                on_hull: curve.hull.contains(p),
            })
            .collect();
        Self { name: name.to_string(), router_version, auc: curve.auc, points, hull: curve.hull.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSection {
    pub grid: Vec<f64>,
    /// Oracle first, then random, then routers in config order.
    pub rows: Vec<AucRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub name: String,
    /// One version per preset router; absent for oracle and random.
    pub router_versions: Option<Vec<String>>,
    pub presets: Vec<PresetResult>,
    pub average: f64,
}

impl SelectionRow {
    pub fn from_report(name: &str, router_versions: Option<Vec<String>>, r: SelectionReport) -> Self {
        Self { name: name.to_string(), router_versions, presets: r.presets, average: r.average }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSection {
    pub rows: Vec<SelectionRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub n_test: usize,
    pub c_max: f64,
    pub norm: EvalNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<AucSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSection>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Runtime(format!("cannot serialize report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn render_table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "config_hash  {}", self.config_hash);
        let _ = writeln!(t, "seed         {}", self.seed);
        let _ = writeln!(t, "test records {}", self.n_test);
        let _ = writeln!(t, "c_max        {}", self.c_max);
        if let Some(a) = &self.auc {
            let _ = writeln!(t);
            let _ = writeln!(t, "Pareto AUC (scores scaled by {}, costs by {})", self.norm.score_scale, self.norm.cost_scale);
            let w = name_width(a.rows.iter().map(|r| r.name.as_str()));
            let _ = writeln!(t, "{:<w$}  {:>8}  {:>10}", "router", "auc", "hull pts");
            for r in &a.rows {
                let _ = writeln!(t, "{:<w$}  {:>8.3}  {:>10}", r.name, r.auc, r.hull.len());
            }
        }
        if let Some(s) = &self.selection {
            let _ = writeln!(t);
            let _ = writeln!(t, "Mean utility per preset");
            let w = name_width(s.rows.iter().map(|r| r.name.as_str()));
            let _ = writeln!(t, "{:<w$}  {:>12}  {:>12}  {:>16}  {:>12}", "router", "low_cost", "balanced", "high_performance", "average");
            for r in &s.rows {
                let _ = write!(t, "{:<w$}", r.name);
                for (p, width) in r.presets.iter().zip([12, 12, 16]) {
                    let _ = write!(t, "  {:>width$.6}", p.mean_utility);
                }
                let _ = writeln!(t, "  {:>12.6}", r.average);
            }
        }
        t
    }

    /// Writes `results.json` and `table.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(RESULTS_FILE), self.to_json()?.as_bytes())?;
        write_atomic(&dir.join(TABLE_FILE), self.render_table().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

fn name_width<'a>(names: impl Iterator<Item = &'a str>) -> usize {
    names.map(str::len).max().unwrap_or(0).max(6)
}
