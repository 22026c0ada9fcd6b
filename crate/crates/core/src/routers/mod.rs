//! Router architectures (kNN, Linear, Linear-MF, MLP, MLP-MF) in both the
//! utility-prediction and the model-selection formulation.

pub mod gradcheck;
pub mod knn;
pub mod net;
pub mod ridge;
pub mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::c_max;
use crate::error::{bail, Error, Result};
use crate::types::{Embedding, ModelCatalog, ModelId, Preference, RoutingDataset, UtilityEstimate};
use crate::utility::argmax_utility;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use knn::{KnnIndex, KnnWeighting};
pub use net::{Head, NetSpec};
pub use ridge::LinearUtilityParams;
pub use train::{Objective, TargetScaling, TrainingLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Knn,
    Linear,
    LinearMf,
    Mlp,
    MlpMf,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Knn,
        Architecture::Linear,
        Architecture::LinearMf,
        Architecture::Mlp,
        Architecture::MlpMf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Knn => "knn",
            Architecture::Linear => "linear",
            Architecture::LinearMf => "linear_mf",
            Architecture::Mlp => "mlp",
            Architecture::MlpMf => "mlp_mf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::InvalidArgument(alloc::format!(
                "unknown architecture {s:?}; valid architectures: knn, linear, linear_mf, mlp, mlp_mf"
            ))
        })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Utility,
    Selection,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Utility => "utility",
            Formulation::Selection => "selection",
        }
    }
}

/// Hyperparameters shared by all architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub k: usize,
    pub ridge_reg: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub model_embed_dim: usize,
    /// Weight of the cost term in the utility loss.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub knn_weighting: KnnWeighting,
    /// Normalize unnormalized kNN support embeddings instead of rejecting them.
    pub auto_normalize: bool,
    /// Standardize score/cost regression targets per model before training.
    pub standardize_targets: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            k: 10,
            ridge_reg: 1e-3,
            hidden_width: 100,
            hidden_layers: 3,
            model_embed_dim: 128,
            alpha: 1.0,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            early_stop_patience: 10,
            knn_weighting: KnnWeighting::Uniform,
            auto_normalize: false,
            standardize_targets: false,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("hidden_width", self.hidden_width),
            ("hidden_layers", self.hidden_layers),
            ("model_embed_dim", self.model_embed_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!(InvalidArgument, "{name} must be >= 1");
            }
        }
        if !(self.ridge_reg >= 0.0) || !self.ridge_reg.is_finite() {
            bail!(InvalidArgument, "ridge_reg must be finite and >= 0");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            bail!(InvalidArgument, "alpha must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            bail!(InvalidArgument, "learning_rate must be finite and > 0");
        }
        Ok(())
    }
}

/// Learned state of a router.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouterParams {
    Knn { index: KnnIndex },
    Ridge { params: LinearUtilityParams },
    Network {
        spec: NetSpec,
        weights: Vec<f64>,
        scaling: Option<TargetScaling>,
    },
}

/// A trained router of any architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedRouter {
    pub arch: Architecture,
    pub formulation: Formulation,
    pub catalog: ModelCatalog,
    pub dim: usize,
    /// Benchmark maximum cost used to resolve preference presets.
    pub c_max: f64,
    /// The trade-off weight a selection router was trained for.
    pub selection_lambda: Option<f64>,
    pub config: RouterConfig,
    pub params: RouterParams,
    pub log: TrainingLog,
}

/// Relative tolerance when matching a requested lambda to a selection router's.
pub const LAMBDA_MATCH_TOL: f64 = 1e-12;

fn check_train(train: &RoutingDataset, config: &RouterConfig) -> Result<()> {
    config.validate()?;
    if train.is_empty() {
        bail!(InvalidArgument, "train set is empty");
    }
    Ok(())
}

fn router(arch: Architecture, formulation: Formulation, train: &RoutingDataset, config: &RouterConfig, params: RouterParams, log: TrainingLog) -> FittedRouter {
    FittedRouter {
        arch,
        formulation,
        catalog: train.catalog().clone(),
        dim: train.dim(),
        c_max: c_max(train),
        selection_lambda: None,
        config: config.clone(),
        params,
        log,
    }
}

/// Builds the kNN support index.
pub fn fit_knn(train: &RoutingDataset, config: &RouterConfig) -> Result<FittedRouter> {
    check_train(train, config)?;
    let index = KnnIndex::build(train, config.auto_normalize)?;
    Ok(router(Architecture::Knn, Formulation::Utility, train, config, RouterParams::Knn { index }, TrainingLog::default()))
}

/// kNN router answering selections by neighbor majority vote at any lambda.
pub fn fit_knn_selection(train: &RoutingDataset, config: &RouterConfig) -> Result<FittedRouter> {
    let mut r = fit_knn(train, config)?;
    r.formulation = Formulation::Selection;
    Ok(r)
}

/// Per-model ridge regressions for score and cost.
pub fn fit_linear_utility(train: &RoutingDataset, config: &RouterConfig) -> Result<FittedRouter> {
    check_train(train, config)?;
    let params = ridge::fit(train, config.ridge_reg)?;
    let loss = ridge_train_mse(&params, train, config.alpha)?;
    let log = TrainingLog {
        initial_train_loss: loss,
        train_losses: vec![loss],
        val_losses: Vec::new(),
        epochs_run: 1,
        best_epoch: 1,
    };
    Ok(router(Architecture::Linear, Formulation::Utility, train, config, RouterParams::Ridge { params }, log))
}

fn ridge_train_mse(p: &LinearUtilityParams, train: &RoutingDataset, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for r in train.records() {
        let e = p.predict(r.embedding.as_slice())?;
        for (m, o) in r.outcomes.iter().enumerate() {
            let (ds, dc) = (e.scores[m] - o.score, e.costs[m] - o.cost);
            total += ds * ds + alpha * dc * dc;
        }
    }
    Ok(total / (train.len() * train.n_models()) as f64)
}

/// Network shape and training objective for a gradient-trained router.
fn network_spec(arch: Architecture, formulation: Formulation, train: &RoutingDataset, lambda: Option<f64>, config: &RouterConfig) -> Result<(NetSpec, Objective)> {
    let (dim, m) = (train.dim(), train.n_models());
    let (dm, w, l) = (config.model_embed_dim, config.hidden_width, config.hidden_layers);
    if formulation == Formulation::Utility {
        let spec = match arch {
            Architecture::LinearMf => NetSpec::linear_mf(dim, dm, m, Head::Utility),
            Architecture::Mlp => NetSpec::mlp(dim, w, l, m, Head::Utility),
            Architecture::MlpMf => NetSpec::mlp_mf(dim, dm, w, l, m, Head::Utility),
            _ => bail!(InvalidArgument, "{arch} utility router is not gradient-trained"),
        };
        return Ok((spec, Objective::Utility { alpha: config.alpha }));
    }
    let Some(lambda) = lambda else {
        bail!(InvalidArgument, "selection routers need a training lambda");
    };
    if !(lambda >= 0.0) || !lambda.is_finite() {
        bail!(InvalidArgument, "lambda must be finite and >= 0, got {lambda}");
    }
    let spec = match arch {
        Architecture::Linear => NetSpec::Softmax { dim, n_models: m },
        Architecture::LinearMf => NetSpec::linear_mf(dim, dm, m, Head::Selection),
        Architecture::Mlp => NetSpec::mlp(dim, w, l, m, Head::Selection),
        Architecture::MlpMf => NetSpec::mlp_mf(dim, dm, w, l, m, Head::Selection),
        Architecture::Knn => bail!(InvalidArgument, "kNN selection uses neighbor voting; use fit_knn_selection"),
    };
    Ok((spec, Objective::Selection { lambda }))
}

fn network_router(arch: Architecture, spec: NetSpec, objective: Objective, train: &RoutingDataset, config: &RouterConfig, weights: Vec<f64>, scaling: Option<TargetScaling>, log: TrainingLog) -> FittedRouter {
    let (formulation, lambda) = match objective {
        Objective::Utility { .. } => (Formulation::Utility, None),
        Objective::Selection { lambda } => (Formulation::Selection, Some(lambda)),
    };
    let mut r = router(arch, formulation, train, config, RouterParams::Network { spec, weights, scaling }, log);
    r.selection_lambda = lambda;
    r
}

fn target_scaling(objective: &Objective, train: &RoutingDataset, config: &RouterConfig) -> Option<TargetScaling> {
    match objective {
        Objective::Utility { .. } if config.standardize_targets => Some(TargetScaling::fit(train)),
        _ => None,
    }
}

fn fit_network(arch: Architecture, formulation: Formulation, train: &RoutingDataset, val: Option<&RoutingDataset>, lambda: Option<f64>, config: &RouterConfig) -> Result<FittedRouter> {
    check_train(train, config)?;
    let (spec, objective) = network_spec(arch, formulation, train, lambda, config)?;
    let scaling = target_scaling(&objective, train, config);
    let data = train::Batchable::new(train, &objective, scaling.as_ref())?;
    let val_data = match val {
        Some(v) => {
            if v.dim() != train.dim() || v.catalog() != train.catalog() {
                bail!(InvalidArgument, "validation set does not match the train set's dimension or catalog");
            }
            Some(train::Batchable::new(v, &objective, scaling.as_ref())?)
        }
        None => None,
    };
    let (weights, log) = train::sgd(&spec, &data, val_data.as_ref(), &objective, config)?;
    Ok(network_router(arch, spec, objective, train, config, weights, scaling, log))
}

/// An untrained network router at its seeded initialization.
pub fn init_network(arch: Architecture, formulation: Formulation, train: &RoutingDataset, lambda: Option<f64>, config: &RouterConfig) -> Result<FittedRouter> {
    check_train(train, config)?;
    let (spec, objective) = network_spec(arch, formulation, train, lambda, config)?;
    let scaling = target_scaling(&objective, train, config);
    let weights = spec.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(config.seed));
    let data = train::Batchable::new(train, &objective, scaling.as_ref())?;
    let loss = train::batch_loss(&spec, &weights, &objective, &data, None, None, &mut net::Workspace::default());
    let log = TrainingLog { initial_train_loss: loss, ..Default::default() };
    Ok(network_router(arch, spec, objective, train, config, weights, scaling, log))
}

/// Bilinear query/model-embedding utility router trained by SGD.
pub fn fit_linear_mf(train: &RoutingDataset, val: Option<&RoutingDataset>, config: &RouterConfig) -> Result<FittedRouter> {
    fit_network(Architecture::LinearMf, Formulation::Utility, train, val, None, config)
}

/// ReLU MLP with per-model score and cost output units.
pub fn fit_mlp_utility(train: &RoutingDataset, val: Option<&RoutingDataset>, config: &RouterConfig) -> Result<FittedRouter> {
    fit_network(Architecture::Mlp, Formulation::Utility, train, val, None, config)
}

/// One shared ReLU MLP over `[x; emb(m)]`.
pub fn fit_mlp_mf(train: &RoutingDataset, val: Option<&RoutingDataset>, config: &RouterConfig) -> Result<FittedRouter> {
    fit_network(Architecture::MlpMf, Formulation::Utility, train, val, None, config)
}

/// Classifier over models trained with cross-entropy against the per-query
/// utility-optimal model at `lambda`.
pub fn fit_selection(train: &RoutingDataset, val: Option<&RoutingDataset>, lambda: f64, arch: Architecture, config: &RouterConfig) -> Result<FittedRouter> {
    fit_network(arch, Formulation::Selection, train, val, Some(lambda), config)
}

/// Fits any architecture/formulation pair. `lambda` is required for
/// gradient-trained selection routers.
pub fn fit(arch: Architecture, formulation: Formulation, train: &RoutingDataset, val: Option<&RoutingDataset>, lambda: Option<f64>, config: &RouterConfig) -> Result<FittedRouter> {
    match (arch, formulation) {
        (Architecture::Knn, Formulation::Utility) => fit_knn(train, config),
        (Architecture::Knn, Formulation::Selection) => fit_knn_selection(train, config),
        (Architecture::Linear, Formulation::Utility) => fit_linear_utility(train, config),
        _ => fit_network(arch, formulation, train, val, lambda, config),
    }
}

impl FittedRouter {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            bail!(InvalidArgument, "embedding dimension {} does not match router dimension {}", x.len(), self.dim);
        }
        Ok(())
    }

    /// Whether this router can produce per-model score/cost estimates.
    pub fn predicts_utility(&self) -> bool {
        matches!(self.params, RouterParams::Knn { .. }) || self.formulation == Formulation::Utility
    }

    /// Raw network outputs (after target unscaling) for one query.
    fn network_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let RouterParams::Network { spec, weights, scaling } = &self.params else {
            bail!(InvalidState, "router has no network parameters");
        };
        let mut out = vec![0.0; spec.n_outputs()];
        spec.forward(weights, x, &mut net::Workspace::default(), &mut out);
        if let Some(s) = scaling {
            s.unscale(&mut out);
        }
        if out.iter().any(|v| !v.is_finite()) {
            bail!(Numerical, "network produced a non-finite output");
        }
        Ok(out)
    }

    /// Predicted score and cost of every catalog model for `x`.
    pub fn predict_utility(&self, x: &[f64]) -> Result<UtilityEstimate> {
        self.check_dim(x)?;
        match &self.params {
            RouterParams::Knn { index } => index.predict(x, self.config.k, self.config.knn_weighting),
            RouterParams::Ridge { params } => params.predict(x),
            RouterParams::Network { spec, .. } => {
                if spec.head() != Head::Utility {
                    bail!(Contract, "{} selection router does not predict utilities", self.arch);
                }
                let out = self.network_outputs(x)?;
                let m = spec.n_models();
                UtilityEstimate::new(out[..m].to_vec(), out[m..].to_vec())
            }
        }
    }

    /// Class logits of a selection network.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match &self.params {
            RouterParams::Network { spec, .. } if spec.head() == Head::Selection => self.network_outputs(x),
            _ => bail!(Contract, "{} {} router has no selection logits", self.arch, self.formulation.name()),
        }
    }

    /// Resolves a preference to lambda using the router's stored `c_max`.
    pub fn resolve(&self, preference: Preference) -> Result<f64> {
        preference.resolve(self.c_max)
    }

    /// Errors unless the router can answer at `lambda`: selection networks
    /// only serve the lambda they were trained for.
    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            bail!(InvalidArgument, "lambda must be finite and >= 0, got {lambda}");
        }
        if self.formulation == Formulation::Selection && !matches!(self.params, RouterParams::Knn { .. }) {
            let trained = self.selection_lambda.unwrap_or(f64::NAN);
            if !((trained - lambda).abs() <= LAMBDA_MATCH_TOL * trained.abs().max(lambda.abs()).max(f64::MIN_POSITIVE)) {
                bail!(Contract, "selection router was trained for lambda = {trained} but queried at lambda = {lambda}");
            }
        }
        Ok(())
    }

    /// Catalog index of the chosen model at trade-off `lambda`.
    pub fn select_index(&self, x: &[f64], lambda: f64) -> Result<usize> {
        self.check_lambda(lambda)?;
        self.check_dim(x)?;
        match (&self.params, self.formulation) {
            (RouterParams::Knn { index }, Formulation::Selection) => index.select(x, self.config.k, lambda),
            (_, Formulation::Utility) => argmax_utility(&self.predict_utility(x)?, lambda),
            (_, Formulation::Selection) => {
                let logits = self.logits(x)?;
                let mut best = 0;
                for (m, l) in logits.iter().enumerate() {
                    if *l > logits[best] {
                        best = m;
                    }
                }
                Ok(best)
            }
        }
    }

    /// Chosen model for `x` under `preference`.
    pub fn select_model(&self, x: &[f64], preference: Preference) -> Result<&ModelId> {
        let lambda = self.resolve(preference)?;
        Ok(self.catalog.id(self.select_index(x, lambda)?))
    }

    pub fn knn_index(&self) -> Option<&KnnIndex> {
        match &self.params {
            RouterParams::Knn { index } => Some(index),
            _ => None,
        }
    }

    /// Short label such as `knn/utility` for reports.
    pub fn label(&self) -> String {
        alloc::format!("{}/{}", self.arch, self.formulation.name())
    }
}

/// Predicts for a validated embedding.
pub fn predict_utility(router: &FittedRouter, x: &Embedding) -> Result<UtilityEstimate> {
    router.predict_utility(x.as_slice())
}

/// Chooses a model for a validated embedding.
pub fn select_model<'r>(router: &'r FittedRouter, x: &Embedding, preference: Preference) -> Result<&'r ModelId> {
    router.select_model(x.as_slice(), preference)
}
