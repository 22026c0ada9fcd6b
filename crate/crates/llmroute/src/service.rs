//! HTTP routing service. Requests read an immutable router snapshot; reload
//! swaps the snapshot atomically, so each response comes from exactly one
//! router version.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use llmroute_core::routers::FittedRouter;
use llmroute_core::{Error as CoreError, Preference, Preset};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::persist::load_router;

pub struct Snapshot {
    pub router: FittedRouter,
    pub version: String,
    pub path: PathBuf,
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    /// Embeddings addressable by record id in `/route` requests.
    records: HashMap<String, Vec<f64>>,
    reload_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(router: FittedRouter, version: String, path: PathBuf, records: HashMap<String, Vec<f64>>) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(Snapshot { router, version, path })),
            records,
            reload_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn load(path: PathBuf, records: HashMap<String, Vec<f64>>) -> Result<Self> {
        let (router, version) = load_router(&path)?;
        Ok(Self::new(router, version, path, records))
    }

    pub fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Loads `path` (or the current file) and swaps it in if it is valid and
    /// serves the same dimension and catalog. Returns the new version.
    pub async fn reload(&self, path: Option<PathBuf>) -> Result<String> {
        let _guard = self.reload_lock.lock().await;
        let old = self.current();
        let path = path.unwrap_or_else(|| old.path.clone());
        let p = path.clone();
        let (router, version) = tokio::task::spawn_blocking(move || load_router(&p)).await.map_err(|e| Error::Runtime(e.to_string()))??;
        if router.dim != old.router.dim {
            return Err(Error::Schema(format!("new router has dimension {}, serving dimension {}", router.dim, old.router.dim)));
        }
        if router.catalog != old.router.catalog {
            return Err(Error::Schema("new router's catalog differs from the serving catalog".into()));
        }
        let snap = Arc::new(Snapshot { router, version: version.clone(), path });
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = snap;
        Ok(version)
    }
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(m) => Self::bad(m),
            CoreError::Contract(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "lambda_mismatch", m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": { "code": self.code, "message": self.message } });
        json_response(self.status, &body)
    }
}

#[derive(Serialize)]
struct Health<'a> {
    ready: bool,
    router_version: &'a str,
    dim: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.current();
    json_response(StatusCode::OK, &Health { ready: true, router_version: &snap.version, dim: snap.router.dim })
}

#[derive(Serialize)]
struct RouteResponse<'a> {
    model: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    utility: Option<f64>,
    router_version: &'a str,
}

enum Query {
    Embedding(Vec<f64>),
    Record(String),
}

fn parse_object(body: &[u8]) -> Result<Map<String, Value>, ApiError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", format!("body is not valid JSON: {e}")))?;
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", "body must be a JSON object")),
    }
}

fn parse_route(body: &[u8]) -> Result<(Query, Preference), ApiError> {
    let obj = parse_object(body)?;
    if let Some(k) = obj.keys().find(|k| !["embedding", "record_id", "lambda", "preset"].contains(&k.as_str())) {
        return Err(ApiError::bad(format!("unknown field {k:?}")));
    }
    let query = match (obj.get("embedding"), obj.get("record_id")) {
        (Some(Value::Array(a)), None) => {
            let x = a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>().ok_or_else(|| ApiError::bad("embedding must be an array of numbers"))?;
            Query::Embedding(x)
        }
        (None, Some(Value::String(id))) => Query::Record(id.clone()),
        (Some(_), None) => return Err(ApiError::bad("embedding must be an array of numbers")),
        (None, Some(_)) => return Err(ApiError::bad("record_id must be a string")),
        _ => return Err(ApiError::bad("exactly one of embedding and record_id is required")),
    };
    let pref = match (obj.get("lambda"), obj.get("preset")) {
        (None, None) => Preference::default(),
        (Some(l), None) => {
            let l = l.as_f64().ok_or_else(|| ApiError::bad("lambda must be a number"))?;
            if !(l >= 0.0) || !l.is_finite() {
                return Err(ApiError::bad(format!("lambda must be finite and >= 0, got {l}")));
            }
            Preference::Lambda(l)
        }
        (None, Some(Value::String(p))) => Preference::Preset(Preset::parse(p)?),
        (None, Some(_)) => return Err(ApiError::bad("preset must be a string")),
        _ => return Err(ApiError::bad("give at most one of lambda and preset")),
    };
    Ok((query, pref))
}

fn route_inner(state: &AppState, body: &[u8]) -> Result<Response, ApiError> {
    let (query, pref) = parse_route(body)?;
    let snap = state.current();
    let router = &snap.router;
    let x: &[f64] = match &query {
        Query::Embedding(x) => x,
        Query::Record(id) => state
            .records
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_record", format!("no loaded record with id {id:?}")))?,
    };
    if x.len() != router.dim {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "dimension_mismatch",
            format!("embedding has dimension {}, router expects {}", x.len(), router.dim),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::bad("embedding values must be finite"));
    }
    let lambda = router.resolve(pref)?;
    let m = router.select_index(x, lambda)?;
    let (mut s, mut c, mut u) = (None, None, None);
    if router.predicts_utility() {
        let est = router.predict_utility(x)?;
        let (ps, pc) = (est.scores[m], est.costs[m]);
        (s, c, u) = (Some(ps), Some(pc), Some(ps - lambda * pc));
    }
    let resp = RouteResponse {
        model: router.catalog.id(m).as_str(),
        predicted_score: s,
        predicted_cost: c,
        utility: u,
        router_version: &snap.version,
    };
    Ok(json_response(StatusCode::OK, &resp))
}

async fn route(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    match route_inner(&state, &body) {
        Ok(r) => r,
        Err(e) => e.into_response(),
    }
}

async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let path = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        let obj = match parse_object(&body) {
            Ok(o) => o,
            Err(e) => return e.into_response(),
        };
        match obj.get("path") {
            None => None,
            Some(Value::String(p)) => Some(PathBuf::from(p)),
            Some(_) => return ApiError::bad("path must be a string").into_response(),
        }
    };
    let previous = state.current().version.clone();
    match state.reload(path).await {
        Ok(v) => {
            tracing::info!(version = %v, previous = %previous, "router reloaded");
            json_response(StatusCode::OK, &serde_json::json!({ "router_version": v, "previous_version": previous }))
        }
        Err(e) => {
            tracing::error!(error = %e, "reload rejected; keeping version {previous}");
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "reload_rejected", e.to_string()).into_response()
        }
    }
}

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/route", post(route))
        .route("/reload", post(reload))
        .with_state(state)
}

/// Binds `addr` (port 0 picks a free port) and serves in a background task.
pub async fn spawn(state: Arc<AppState>, addr: &str) -> Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Runtime(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::Runtime(e.to_string()))?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app(state)).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((local, handle))
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Runtime(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::Runtime(e.to_string()))?;
    tracing::info!(%local, version = %state.current().version, "serving");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Runtime(e.to_string()))
}
