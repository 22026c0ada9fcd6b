//! Router files: a JSON envelope around a fitted router, versioned by the
//! SHA-256 of the file bytes.

use std::path::Path;

use llmroute_core::routers::{FittedRouter, Formulation, RouterParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{write_atomic, Error, Result};

pub const ROUTER_FORMAT: &str = "llmroute-router/1";

#[derive(Serialize, Deserialize)]
struct RouterFile {
    format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    router: FittedRouter,
}

/// Lowercase hex SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Structural checks a deserialized router must pass before use.
pub fn validate_router(r: &FittedRouter) -> Result<()> {
    let bad = |m: String| Err(Error::Schema(format!("invalid router file: {m}")));
    if r.catalog.is_empty() || r.dim == 0 {
        return bad("empty catalog or zero dimension".into());
    }
    if !(r.c_max > 0.0 && r.c_max.is_finite()) {
        return bad(format!("c_max must be positive, got {}", r.c_max));
    }
    r.config.validate()?;
    match &r.params {
        RouterParams::Knn { index } => {
            index.validate()?;
            if index.dim() != r.dim || index.n_models() != r.catalog.len() || index.is_empty() {
                return bad("kNN index does not match the router's dimension or catalog".into());
            }
        }
        RouterParams::Ridge { params } => {
            let (m, d) = (r.catalog.len(), r.dim);
            if params.dim != d || params.score_weights.len() != m * d || params.cost_weights.len() != m * d || params.score_bias.len() != m || params.cost_bias.len() != m {
                return bad("linear weights do not match the router's dimension or catalog".into());
            }
        }
        RouterParams::Network { spec, weights, .. } => {
            if spec.dim() != r.dim || spec.n_models() != r.catalog.len() || weights.len() != spec.n_params() {
                return bad("network shape does not match the router's dimension or catalog".into());
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return bad("non-finite network weight".into());
            }
        }
    }
    if r.formulation == Formulation::Selection && !matches!(r.params, RouterParams::Knn { .. }) && r.selection_lambda.is_none() {
        return bad("selection network without a training lambda".into());
    }
    Ok(())
}

/// Serializes a router; `config_hash` records the run config that produced it.
pub fn router_to_bytes(router: &FittedRouter, config_hash: Option<&str>) -> Result<Vec<u8>> {
    let file = RouterFile { format: ROUTER_FORMAT.to_string(), config_hash: config_hash.map(str::to_string), router: router.clone() };
    let mut bytes = serde_json::to_vec(&file).map_err(|e| Error::Runtime(format!("cannot serialize router: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parses and validates router bytes; returns the router and its version.
pub fn router_from_bytes(bytes: &[u8]) -> Result<(FittedRouter, String)> {
    let file: RouterFile = serde_json::from_slice(bytes).map_err(|e| Error::Schema(format!("invalid router file: {e}")))?;
    if file.format != ROUTER_FORMAT {
        return Err(Error::Schema(format!("unsupported router format {:?}, expected {ROUTER_FORMAT}", file.format)));
    }
    validate_router(&file.router)?;
    Ok((file.router, content_hash(bytes)))
}

/// Writes the router atomically and returns its version.
pub fn save_router(path: &Path, router: &FittedRouter, config_hash: Option<&str>) -> Result<String> {
    let bytes = router_to_bytes(router, config_hash)?;
    write_atomic(path, &bytes)?;
    Ok(content_hash(&bytes))
}

pub fn load_router(path: &Path) -> Result<(FittedRouter, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    router_from_bytes(&bytes).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}
