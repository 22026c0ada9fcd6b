mod common;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use llmroute::persist::{content_hash, save_router};
use llmroute::service::{spawn, AppState};
use llmroute_core::routers::{fit, fit_knn, Architecture, Formulation, RouterConfig};
use llmroute_core::utility::argmax_utility;
use llmroute_core::{Preset, UtilityEstimate};
use serde_json::{json, Value};

struct Server {
    base: String,
    client: reqwest::Client,
}

impl Server {
    async fn start(path: &Path, records: HashMap<String, Vec<f64>>) -> Self {
        let state = Arc::new(AppState::load(path.to_path_buf(), records).unwrap());
        let (addr, _) = spawn(state, "127.0.0.1:0").await.unwrap();
        Self { base: format!("http://{addr}"), client: reqwest::Client::new() }
    }

    async fn post(&self, route: &str, body: String) -> (u16, Vec<u8>) {
        let r = self.client.post(format!("{}{route}", self.base)).body(body).send().await.unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    async fn health(&self) -> Value {
        self.client.get(format!("{}/health", self.base)).send().await.unwrap().json().await.unwrap()
    }
}

fn json_of(b: &[u8]) -> Value {
    serde_json::from_slice(b).unwrap()
}

#[tokio::test]
async fn health_route_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::synthetic(60, 7);
    let router = fit_knn(&ds, &RouterConfig { k: 1, ..Default::default() }).unwrap();
    let path = dir.path().join("knn.json");
    let version = save_router(&path, &router, None).unwrap();
    assert_eq!(version, content_hash(&std::fs::read(&path).unwrap()));
    let records = ds.records().iter().map(|r| (r.id.clone(), r.embedding.as_slice().to_vec())).collect();
    let srv = Server::start(&path, records).await;

    let h = srv.health().await;
    assert_eq!(h["ready"], true);
    assert_eq!(h["router_version"], version.as_str());
    assert_eq!(h["dim"], 8);

    for (i, r) in ds.records().iter().enumerate().take(20) {
        let lambda = 0.3 * i as f64;
        let best = argmax_utility(&UtilityEstimate::from_outcomes(&r.outcomes), lambda).unwrap();
        let (status, body) = srv.post("/route", json!({"embedding": r.embedding.as_slice(), "lambda": lambda}).to_string()).await;
        assert_eq!(status, 200);
        let v = json_of(&body);
        assert_eq!(v["model"], ds.catalog().id(best).as_str());
        let (s, c, u) = (v["predicted_score"].as_f64().unwrap(), v["predicted_cost"].as_f64().unwrap(), v["utility"].as_f64().unwrap());
        assert_eq!((s, c), (r.outcomes[best].score, r.outcomes[best].cost));
        assert_eq!(u, s - lambda * c);
        let (_, by_id) = srv.post("/route", json!({"record_id": r.id, "lambda": lambda}).to_string()).await;
        assert_eq!(by_id, body);
    }

    let body = json!({"embedding": ds.records()[3].embedding.as_slice(), "preset": "high_performance"}).to_string();
    let (_, a) = srv.post("/route", body.clone()).await;
    let (_, b) = srv.post("/route", body).await;
    assert_eq!(a, b);
    let x = ds.records()[3].embedding.as_slice();
    let (_, default) = srv.post("/route", json!({"embedding": x}).to_string()).await;
    let (_, balanced) = srv.post("/route", json!({"embedding": x, "preset": "balanced"}).to_string()).await;
    assert_eq!(default, balanced);
    let expected = router.select_model(x, llmroute_core::Preference::Preset(Preset::HighPerformance)).unwrap();
    assert_eq!(json_of(&a)["model"], expected.as_str());
}

#[tokio::test]
async fn error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::synthetic(40, 8);
    let path = dir.path().join("r.json");
    save_router(&path, &fit_knn(&ds, &RouterConfig::default()).unwrap(), None).unwrap();
    let srv = Server::start(&path, HashMap::new()).await;
    let x = ds.records()[0].embedding.as_slice().to_vec();
    let cases = [
        ("{not json", 400, "malformed_body"),
        ("[1, 2]", 400, "malformed_body"),
        ("{}", 400, "invalid_request"),
        (&*json!({"embedding": x, "record_id": "s00000"}).to_string(), 400, "invalid_request"),
        (&*json!({"embedding": x, "lambda": -1.0}).to_string(), 400, "invalid_request"),
        (&*json!({"embedding": x, "lambda": 1.0, "preset": "balanced"}).to_string(), 400, "invalid_request"),
        (&*json!({"embedding": x, "preset": "cheapest"}).to_string(), 400, "invalid_request"),
        (&*json!({"embedding": ["a"]}).to_string(), 400, "invalid_request"),
        (&*json!({"embedding": x, "colour": 1}).to_string(), 400, "invalid_request"),
        (&*json!({"embedding": [1.0, 0.0]}).to_string(), 422, "dimension_mismatch"),
        (&*json!({"record_id": "s00000"}).to_string(), 404, "unknown_record"),
    ];
    for (body, status, code) in cases {
        let (s, b) = srv.post("/route", body.to_string()).await;
        assert_eq!(s, status, "{body}");
        assert_eq!(json_of(&b)["error"]["code"], code, "{body}");
    }
    assert_eq!(srv.health().await["ready"], true);
}

#[tokio::test]
async fn selection_router_omits_predictions_and_checks_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::synthetic(80, 9);
    let cfg = RouterConfig { hidden_width: 8, hidden_layers: 1, epochs: 3, learning_rate: 0.1, ..Default::default() };
    let mut router = fit(Architecture::Mlp, Formulation::Selection, &ds, None, Some(0.5), &cfg).unwrap();
    router.c_max = 1.0;
    let path = dir.path().join("sel.json");
    save_router(&path, &router, None).unwrap();
    let srv = Server::start(&path, HashMap::new()).await;
    let x = ds.records()[0].embedding.as_slice();
    let (s, b) = srv.post("/route", json!({"embedding": x, "preset": "balanced"}).to_string()).await;
    assert_eq!(s, 200);
    let v = json_of(&b);
    assert!(v.get("predicted_score").is_none() && v.get("utility").is_none());
    assert!(v["model"].is_string());
    let (s, b) = srv.post("/route", json!({"embedding": x, "lambda": 0.25}).to_string()).await;
    assert_eq!(s, 422);
    assert_eq!(json_of(&b)["error"]["code"], "lambda_mismatch");
}

#[tokio::test]
async fn reload_same_file_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::synthetic(40, 10);
    let path = dir.path().join("r.json");
    let v1 = save_router(&path, &fit_knn(&ds, &RouterConfig::default()).unwrap(), None).unwrap();
    let srv = Server::start(&path, HashMap::new()).await;

    let (s, b) = srv.post("/reload", String::new()).await;
    assert_eq!(s, 200);
    assert_eq!(json_of(&b)["router_version"], v1.as_str());
    assert_eq!(srv.health().await["router_version"], v1.as_str());

    let other = llmroute_core::analysis::generate_synthetic(&llmroute_core::analysis::SyntheticConfig {
        n_queries: 40,
        ambient_dim: 5,
        ..Default::default()
    })
    .unwrap();
    let wrong_dim = dir.path().join("wrong.json");
    save_router(&wrong_dim, &fit_knn(&other, &RouterConfig::default()).unwrap(), None).unwrap();
    let (s, b) = srv.post("/reload", json!({"path": wrong_dim}).to_string()).await;
    assert_eq!(s, 422);
    assert_eq!(json_of(&b)["error"]["code"], "reload_rejected");

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{\"format\": \"llmroute-router/1\"}").unwrap();
    let (s, _) = srv.post("/reload", json!({"path": garbage}).to_string()).await;
    assert_eq!(s, 422);
    let (s, _) = srv.post("/reload", json!({"path": dir.path().join("absent.json")}).to_string()).await;
    assert_eq!(s, 422);

    let h = srv.health().await;
    assert_eq!(h["ready"], true);
    assert_eq!(h["router_version"], v1.as_str());

    let linear = dir.path().join("linear.json");
    let v2 = save_router(&linear, &fit(Architecture::Linear, Formulation::Utility, &ds, None, None, &RouterConfig::default()).unwrap(), None).unwrap();
    let (s, b) = srv.post("/reload", json!({"path": linear}).to_string()).await;
    assert_eq!(s, 200);
    assert_eq!(json_of(&b)["previous_version"], v1.as_str());
    assert_eq!(srv.health().await["router_version"], v2.as_str());
}
