use std::path::{Path, PathBuf};

use llmroute::dataio::*;
use llmroute::Error;
use llmroute_core::analysis::{generate_synthetic, SyntheticConfig};
use llmroute_core::data::{split_dataset, SplitSpec};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const TWO_MODELS: &str = "[[models]]\nname = \"a\"\ninput_price = 1.0\noutput_price = 2.0\n\n[[models]]\nname = \"b\"\ninput_price = 3.0\noutput_price = 4.0\n";

fn parse(text: &str) -> llmroute::Result<llmroute_core::RoutingDataset> {
    parse_dataset(text, Path::new("mem.jsonl"), &parse_catalog(TWO_MODELS).unwrap(), None)
}

#[test]
fn catalog_prices_give_table_costs() {
    let cat = load_catalog(&fixture("catalog.toml")).unwrap();
    let gpt4 = cat.index_of("gpt-4").unwrap();
    let text = r#"{"id": "x", "embedding": [1.0, 0.0], "outcomes": {"gpt-4": {"score": 1.0, "input_tokens": 1000000, "output_tokens": 1000000}, "claude-3-haiku": {"score": 0.5, "input_tokens": 0, "output_tokens": 0}}}"#;
    let ds = parse_dataset(text, Path::new("t"), &cat, None).unwrap();
    assert!((ds.records()[0].outcomes[gpt4].cost - 90.0).abs() < 1e-9);
    assert_eq!(ds.records()[0].outcomes[1 - gpt4].cost, 0.0);
}

#[test]
fn fixture_loads_with_separate_embeddings() {
    let ds = load_dataset_with_embeddings(&fixture("dataset.jsonl"), &fixture("catalog.toml"), &fixture("embeddings.jsonl")).unwrap();
    assert_eq!(ds.len(), 12);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.meta, "fixture benchmark");
    let table = load_embeddings(&fixture("embeddings.jsonl")).unwrap();
    assert_eq!(table.header.encoder, "fixture-encoder");
    assert!(table.header.normalized);
    for r in ds.records() {
        assert_eq!(r.embedding.as_slice(), table.get(&r.id).unwrap());
        assert!((r.embedding.norm() - 1.0).abs() < 1e-4);
    }
    let err = load_dataset(&fixture("dataset.jsonl"), &fixture("catalog.toml")).unwrap_err();
    assert!(err.to_string().contains("no embedding"), "{err}");
}

#[test]
fn missing_outcome_names_record_and_model() {
    let err = parse(r#"{"id": "q7", "embedding": [1.0], "outcomes": {"a": {"score": 0.5, "cost": 0.1}}}"#).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
    assert!(err.to_string().contains("record q7 missing outcome for b"), "{err}");
}

#[test]
fn schema_errors() {
    let unknown = r#"{"id": "q", "embedding": [1.0], "outcomes": {"a": {"score": 0.5, "cost": 0.1}, "b": {"score": 0.5, "cost": 0.1}, "c": {"score": 1, "cost": 1}}}"#;
    assert!(parse(unknown).unwrap_err().to_string().contains("unknown model c"));
    let no_cost = r#"{"id": "q", "embedding": [1.0], "outcomes": {"a": {"score": 0.5, "input_tokens": 3}, "b": {"score": 0.5, "cost": 0.1}}}"#;
    assert!(parse(no_cost).unwrap_err().to_string().contains("needs a cost"));
    let negative = r#"{"id": "q", "embedding": [1.0], "outcomes": {"a": {"score": 0.5, "input_tokens": -3, "output_tokens": 1}, "b": {"score": 0.5, "cost": 0.1}}}"#;
    assert!(parse(negative).unwrap_err().is_usage());
    let bad_cost = r#"{"id": "q", "embedding": [1.0], "outcomes": {"a": {"score": 1.5, "cost": -0.1}, "b": {"score": 0.5, "cost": 0.1}}}"#;
    assert!(parse(bad_cost).unwrap_err().to_string().contains("cost must be finite"));
    let ok = r#"{"id": "q", "embedding": [1.0, 0.0], "outcomes": {"a": {"score": 0.5, "cost": 0.1}, "b": {"score": 0.5, "cost": 0.1}}}"#;
    let mismatch = format!("{ok}\n{}", ok.replace("\"q\"", "\"r\"").replace("[1.0, 0.0]", "[1.0]"));
    assert!(parse(&mismatch).is_err());
    assert!(parse(&format!("{ok}\n{ok}")).unwrap_err().to_string().contains("duplicate"));
    assert!(parse(&format!("{{\"meta\": \"m\", \"dim\": 3}}\n{ok}")).unwrap_err().to_string().contains("dim 3"));
    match parse("{\"id\": \"q\", nonsense").unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 1),
        other => panic!("{other}"),
    }
    assert!(parse_catalog("[[models]]\nname = \"a\"\ninput_price = -1.0\noutput_price = 1.0\n").is_err());
}

#[test]
fn embedding_file_errors() {
    let p = Path::new("e.jsonl");
    assert!(parse_embeddings("{\"id\": \"a\", \"embedding\": [1.0]}\n", p).is_err());
    let hdr = "{\"encoder\": \"x\", \"dim\": 2}\n";
    assert!(parse_embeddings(&format!("{hdr}{{\"id\": \"a\", \"embedding\": [1.0]}}\n"), p).unwrap_err().to_string().contains("dim 1"));
    let dup = format!("{hdr}{{\"id\": \"a\", \"embedding\": [1.0, 0.0]}}\n{{\"id\": \"a\", \"embedding\": [0.0, 1.0]}}\n");
    assert!(parse_embeddings(&dup, p).is_err());
    let ok = parse_embeddings(&format!("{hdr}{{\"id\": \"a\", \"embedding\": [1.0, 0.0]}}\n"), p).unwrap();
    assert_eq!(ok.len(), 1);
    assert_eq!(ok.ids, vec!["a".to_string()]);
}

#[test]
fn dataset_and_catalog_round_trip() {
    let ds = generate_synthetic(&SyntheticConfig { n_queries: 40, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (dp, cp) = (dir.path().join("d.jsonl"), dir.path().join("c.toml"));
    save_dataset(&dp, &ds).unwrap();
    save_catalog(&cp, ds.catalog()).unwrap();
    let back = load_dataset(&dp, &cp).unwrap();
    assert_eq!(back, ds);
    assert_eq!(dataset_to_jsonl(&back), std::fs::read_to_string(&dp).unwrap());
}

#[test]
fn manifests_reproduce_split() {
    let ds = generate_synthetic(&SyntheticConfig { n_queries: 100, ..Default::default() }).unwrap();
    let split = split_dataset(&ds, &SplitSpec::with_seed(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_split_manifests(dir.path(), &split, "abc").unwrap();
    assert_eq!(paths.len(), 3);
    let parts = [&split.train, &split.val, &split.test];
    for (part, expected) in SPLIT_PARTS.iter().zip(parts) {
        let m = read_manifest(&manifest_path(dir.path(), part)).unwrap();
        assert_eq!(m.seed, 4);
        assert_eq!(m.config_hash, "abc");
        assert_eq!(&subset_by_ids(&ds, &m.ids).unwrap(), expected);
    }
    assert!(subset_by_ids(&ds, &["nope".to_string()]).is_err());
}
