#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llmroute::dataio::{save_catalog, save_dataset};
use llmroute_core::analysis::{generate_synthetic, SyntheticConfig};
use llmroute_core::RoutingDataset;

pub const ROUTERS: &str = r#"
[[routers]]
name = "knn"
arch = "knn"
k_candidates = [1, 5, 10]

[[routers]]
name = "mlp"
arch = "mlp"

[routers.params]
hidden_width = 16
hidden_layers = 2
epochs = 15
learning_rate = 0.1
batch_size = 32
seed = 3
"#;

pub fn synthetic(n: usize, seed: u64) -> RoutingDataset {
    generate_synthetic(&SyntheticConfig { n_queries: n, ambient_dim: 8, seed, ..Default::default() }).unwrap()
}

/// Writes `data.jsonl`, `catalog.toml` and `run.toml` into `dir`.
pub fn write_workspace(dir: &Path, ds: &RoutingDataset, extra: &str) -> PathBuf {
    save_dataset(&dir.join("data.jsonl"), ds).unwrap();
    save_catalog(&dir.join("catalog.toml"), ds.catalog()).unwrap();
    let cfg = format!(
        "out = \"out\"\n\n[data]\ndataset = \"data.jsonl\"\ncatalog = \"catalog.toml\"\n\n[split]\nseed = 0\n\n[eval]\ngrid_points = 41\n{extra}"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

pub fn llmroute(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmroute"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}
