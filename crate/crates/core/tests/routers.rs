mod common;

use llmroute_core::routers::gradcheck::CHECKED_PARAMS;
use llmroute_core::routers::*;
use llmroute_core::{Embedding, Error, Outcome, Preference, QueryRecord, RoutingDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn train_mse(r: &FittedRouter, ds: &RoutingDataset) -> f64 {
    let mut total = 0.0;
    for rec in ds.records() {
        let e = r.predict_utility(rec.embedding.as_slice()).unwrap();
        for (m, o) in rec.outcomes.iter().enumerate() {
            total += (e.scores[m] - o.score).powi(2) + (e.costs[m] - o.cost).powi(2);
        }
    }
    total / (ds.len() * ds.n_models()) as f64
}

fn accuracy(r: &FittedRouter, ds: &RoutingDataset, lambda: f64) -> f64 {
    let hits = ds
        .records()
        .iter()
        .filter(|rec| {
            let truth = llmroute_core::UtilityEstimate::from_outcomes(&rec.outcomes);
            r.select_index(rec.embedding.as_slice(), lambda).unwrap() == llmroute_core::argmax_utility(&truth, lambda).unwrap()
        })
        .count();
    hits as f64 / ds.len() as f64
}

fn weights(r: &FittedRouter) -> &[f64] {
    match &r.params {
        RouterParams::Network { weights, .. } => weights,
        _ => panic!("not a network router"),
    }
}

#[test]
fn config_defaults() {
    let c = RouterConfig::default();
    assert_eq!(c.model_embed_dim, 128);
    assert_eq!(c.hidden_width, 100);
    assert_eq!(c.hidden_layers, 3);
    assert_eq!(c.ridge_reg, 1e-3);
    assert_eq!(c.alpha, 1.0);
    assert_eq!(c.learning_rate, 1e-3);
    assert_eq!((c.epochs, c.batch_size, c.early_stop_patience), (100, 64, 10));
    for bad in [
        RouterConfig { k: 0, ..c.clone() },
        RouterConfig { epochs: 0, ..c.clone() },
        RouterConfig { learning_rate: 0.0, ..c.clone() },
        RouterConfig { alpha: -1.0, ..c.clone() },
        RouterConfig { ridge_reg: f64::NAN, ..c.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn architecture_names_round_trip() {
    for a in Architecture::ALL {
        assert_eq!(Architecture::parse(a.name()).unwrap(), a);
    }
    let err = Architecture::parse("transformer").unwrap_err().to_string();
    assert!(err.contains("mlp_mf"));
}

#[test]
fn linear_mf_fits_rank_one_bilinear_data() {
    let u = [0.8, -0.5, 0.3, 0.1, -0.2, 0.4];
    let v = [1.0, -0.6, 0.3];
    let ds = common::planted(200, 6, 3, 11, |e, m| {
        let ux: f64 = u.iter().zip(e).map(|(a, b)| a * b).sum();
        (0.5 + 0.4 * ux * v[m], 0.2)
    });
    let cfg = RouterConfig { learning_rate: 0.3, batch_size: 16, model_embed_dim: 8, ..Default::default() };
    let r = fit_linear_mf(&ds, None, &cfg).unwrap();
    assert_eq!(r.log.epochs_run, RouterConfig::default().epochs);
    let loss = *r.log.train_losses.last().unwrap();
    assert!(train_mse(&r, &ds) < 1e-4, "mse {}", train_mse(&r, &ds));
    assert!(loss < 1e-4, "loss {loss}");
}

#[test]
fn network_training_is_deterministic() {
    let ds = common::planted(40, 5, 2, 3, |e, m| (0.5 + 0.2 * e[m], 0.1 + 0.01 * m as f64));
    let cfg = RouterConfig { epochs: 5, hidden_width: 16, model_embed_dim: 4, batch_size: 8, learning_rate: 0.05, ..Default::default() };
    for fit in [fit_linear_mf, fit_mlp_utility, fit_mlp_mf] {
        let a = fit(&ds, None, &cfg).unwrap();
        let b = fit(&ds, None, &cfg).unwrap();
        let bits = |r: &FittedRouter| weights(r).iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = fit(&ds, None, &RouterConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }
}

#[test]
fn mlp_memorizes_small_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets: Vec<Vec<(f64, f64)>> = (0..20).map(|_| (0..2).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..0.1))).collect()).collect();
    let ds = common::planted(20, 8, 2, 6, |_, _| (0.0, 0.0));
    let records = ds
        .records()
        .iter()
        .zip(&targets)
        .map(|(r, t)| QueryRecord {
            id: r.id.clone(),
            embedding: r.embedding.clone(),
            outcomes: t.iter().map(|&(s, c)| Outcome::new(s, c).unwrap()).collect(),
        })
        .collect();
    let ds = RoutingDataset::new(ds.catalog().clone(), records, "memorize").unwrap();
    let cfg = RouterConfig { learning_rate: 1.0, epochs: 2000, batch_size: 20, ..Default::default() };
    let r = fit_mlp_utility(&ds, None, &cfg).unwrap();
    let mse = train_mse(&r, &ds);
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn zero_alpha_leaves_cost_head_untouched() {
    let ds = common::planted(30, 5, 3, 8, |e, m| (0.5 + 0.3 * e[m], 0.2 + 0.1 * e[0]));
    let cfg = RouterConfig { alpha: 0.0, hidden_width: 12, model_embed_dim: 4, ..Default::default() };
    for arch in [Architecture::Mlp, Architecture::MlpMf] {
        let r = init_network(arch, Formulation::Utility, &ds, None, &cfg).unwrap();
        let RouterParams::Network { spec, weights, .. } = &r.params else { unreachable!() };
        let data = train::Batchable::new(&ds, &Objective::Utility { alpha: 0.0 }, None).unwrap();
        let mut grad = vec![0.0; weights.len()];
        train::batch_loss(spec, weights, &Objective::Utility { alpha: 0.0 }, &data, None, Some(&mut grad), &mut Default::default());
        let idx = spec.cost_head_params().unwrap();
        assert!(!idx.is_empty());
        assert!(idx.iter().all(|&i| grad[i] == 0.0));
        assert!(grad.iter().any(|g| *g != 0.0));
    }
}

#[test]
fn mlp_mf_fits_additive_function() {
    let ds = common::planted(60, 4, 3, 9, |e, m| (0.3 + 0.2 * e[0] + 0.15 * m as f64, 0.1 * (m + 1) as f64));
    let cfg = RouterConfig { learning_rate: 0.3, epochs: 1000, batch_size: 16, model_embed_dim: 8, ..Default::default() };
    let r = fit_mlp_mf(&ds, None, &cfg).unwrap();
    let mse = train_mse(&r, &ds);
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn mlp_mf_input_is_query_plus_model_embedding() {
    let spec = NetSpec::mlp_mf(32, 128, 100, 3, 4, Head::Utility);
    let NetSpec::MlpMf { shape, .. } = &spec else { unreachable!() };
    assert_eq!(shape.sizes, vec![32 + 128, 100, 100, 100, 2]);
    let mlp = NetSpec::mlp(32, 100, 3, 4, Head::Utility);
    assert_eq!(mlp.n_outputs(), 8);
}

fn two_model_separable(n: usize, seed: u64) -> RoutingDataset {
    // A wins where e[0] > 0, B elsewhere; the margin keeps classes separable.
    let ds = common::planted(n, 3, 2, seed, |e, m| {
        let a_wins = e[0] > 0.0;
        let s = if (m == 0) == a_wins { 0.9 } else { 0.2 };
        (s, 0.01)
    });
    let records = ds.records().iter().filter(|r| r.embedding.as_slice()[0].abs() > 0.1).cloned().collect();
    RoutingDataset::new(ds.catalog().clone(), records, "separable").unwrap()
}

#[test]
fn selection_separates_two_models() {
    let ds = two_model_separable(120, 2);
    let cfg = RouterConfig { learning_rate: 0.3, epochs: 300, batch_size: 16, model_embed_dim: 8, ..Default::default() };
    for arch in [Architecture::Linear, Architecture::LinearMf, Architecture::Mlp, Architecture::MlpMf] {
        let r = fit_selection(&ds, None, 0.0, arch, &cfg).unwrap();
        assert_eq!(r.selection_lambda, Some(0.0));
        assert_eq!(accuracy(&r, &ds, 0.0), 1.0, "{arch}");
    }
}

#[test]
fn selection_single_class() {
    let ds = common::planted(30, 4, 3, 4, |_, m| ([0.2, 0.9, 0.5][m], 0.01));
    let cfg = RouterConfig { learning_rate: 0.1, epochs: 50, ..Default::default() };
    let r = fit_selection(&ds, None, 0.0, Architecture::Linear, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x = common::random_unit(&mut rng, 4);
        assert_eq!(r.select_index(&x, 0.0).unwrap(), 1);
    }
}

#[test]
fn selection_labels_use_utility() {
    let ds = common::planted(12, 2, 2, 4, |_, m| [(1.0, 1.0), (0.9, 0.1)][m]);
    let b = train::Batchable::new(&ds, &Objective::Selection { lambda: 1.0 }, None).unwrap();
    assert!(b.labels.iter().all(|&l| l == 1));
    let b = train::Batchable::new(&ds, &Objective::Selection { lambda: 0.0 }, None).unwrap();
    assert!(b.labels.iter().all(|&l| l == 0));
}

#[test]
fn selection_router_rejects_other_lambda() {
    let ds = two_model_separable(40, 3);
    let r = fit_selection(&ds, None, 0.5, Architecture::Linear, &RouterConfig { epochs: 2, ..Default::default() }).unwrap();
    let x = ds.records()[0].embedding.as_slice();
    assert!(r.select_index(x, 0.5).is_ok());
    assert!(matches!(r.select_index(x, 0.6), Err(Error::Contract(_))));
    assert!(matches!(r.predict_utility(x), Err(Error::Contract(_))));
    assert!(fit_selection(&ds, None, -1.0, Architecture::Mlp, &RouterConfig::default()).is_err());
    assert!(fit_selection(&ds, None, 0.5, Architecture::Knn, &RouterConfig::default()).is_err());
}

#[test]
fn knn_router_dispatch() {
    let ds = common::planted(50, 4, 3, 12, |e, m| (0.5 + 0.4 * e[m], 0.1 * (m + 1) as f64));
    let cfg = RouterConfig { k: 7, ..Default::default() };
    let r = fit_knn(&ds, &cfg).unwrap();
    let x = common::random_unit(&mut ChaCha8Rng::seed_from_u64(3), 4);
    let via_router = r.predict_utility(&x).unwrap();
    let direct = r.knn_index().unwrap().predict(&x, 7, KnnWeighting::Uniform).unwrap();
    assert_eq!(via_router, direct);

    let one = fit_knn(&ds, &RouterConfig { k: 1, ..Default::default() }).unwrap();
    for lambda in [0.0, 0.5, 5.0] {
        for rec in ds.records() {
            let truth = llmroute_core::UtilityEstimate::from_outcomes(&rec.outcomes);
            let want = llmroute_core::argmax_utility(&truth, lambda).unwrap();
            assert_eq!(one.select_index(rec.embedding.as_slice(), lambda).unwrap(), want);
        }
    }
}

#[test]
fn linear_router_zero_embedding_gives_biases() {
    let ds = common::planted(40, 4, 2, 13, |e, m| (0.5 + 0.3 * e[m] - 0.1 * e[3], 0.2 + 0.05 * e[1]));
    let r = fit_linear_utility(&ds, &RouterConfig::default()).unwrap();
    let RouterParams::Ridge { params } = &r.params else { unreachable!() };
    let e = r.predict_utility(&[0.0; 4]).unwrap();
    assert_eq!(e.scores, params.score_bias);
    assert_eq!(e.costs, params.cost_bias);
    assert!(matches!(r.predict_utility(&[0.0; 3]), Err(Error::InvalidArgument(_))));
}

#[test]
fn mlp_outputs_finite_on_random_inputs() {
    let ds = common::planted(60, 16, 3, 14, |e, m| (0.5 + 0.3 * e[m], 0.1 * (m + 1) as f64));
    let cfg = RouterConfig { epochs: 5, learning_rate: 0.05, ..Default::default() };
    let r = fit_mlp_utility(&ds, None, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..1000 {
        let x = common::random_unit(&mut rng, 16);
        let e = r.predict_utility(&x).unwrap();
        assert!(e.scores.iter().chain(&e.costs).all(|v| v.is_finite()));
    }
}

#[test]
fn utility_router_at_zero_lambda_picks_best_score() {
    let ds = common::planted(80, 4, 3, 16, |e, m| (0.5 + 0.3 * e[m], 0.1 * (m + 1) as f64));
    let r = fit_linear_utility(&ds, &RouterConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let x = common::random_unit(&mut rng, 4);
        let e = r.predict_utility(&x).unwrap();
        let best = (0..3).max_by(|&a, &b| e.scores[a].total_cmp(&e.scores[b])).unwrap();
        let emb = Embedding::new(x.clone()).unwrap();
        assert_eq!(select_model(&r, &emb, Preference::Lambda(0.0)).unwrap(), ds.catalog().id(best));
    }
}

#[test]
fn gradient_checks_at_fresh_init() {
    let ds = common::planted(16, 32, 3, 1, |e, m| (0.5 + 0.3 * e[m], 0.1 * (m + 1) as f64 + 0.05 * e[0]));
    let cfg = RouterConfig::default();
    for (arch, formulation, lambda) in [
        (Architecture::LinearMf, Formulation::Utility, None),
        (Architecture::Mlp, Formulation::Utility, None),
        (Architecture::MlpMf, Formulation::Utility, None),
        (Architecture::Linear, Formulation::Selection, Some(1.0)),
        (Architecture::LinearMf, Formulation::Selection, Some(1.0)),
        (Architecture::Mlp, Formulation::Selection, Some(1.0)),
        (Architecture::MlpMf, Formulation::Selection, Some(1.0)),
    ] {
        let r = init_network(arch, formulation, &ds, lambda, &cfg).unwrap();
        for seed in 0..3 {
            let rep = gradient_check(&r, &ds, 1e-5, seed).unwrap();
            assert!(rep.max_relative_error <= 1e-4, "{arch} {formulation:?}: {rep:?}");
            assert_eq!(rep.params_checked, CHECKED_PARAMS.min(weights(&r).len()));
        }
    }
}

#[test]
fn gradient_vanishes_at_zero_loss() {
    let ds = common::planted(12, 6, 2, 18, |_, _| (0.5, 0.5));
    let cfg = RouterConfig { hidden_width: 10, model_embed_dim: 4, ..Default::default() };
    let obj = Objective::Utility { alpha: 1.0 };
    for arch in [Architecture::LinearMf, Architecture::Mlp, Architecture::MlpMf] {
        let r = init_network(arch, Formulation::Utility, &ds, None, &cfg).unwrap();
        let RouterParams::Network { spec, weights, .. } = &r.params else { unreachable!() };
        // targets replaced by the network's own predictions
        let mut data = train::Batchable::new(&ds, &obj, None).unwrap();
        for (x, t) in data.inputs.iter().zip(data.targets.iter_mut()) {
            let e = r.predict_utility(x).unwrap();
            *t = e.scores.iter().chain(&e.costs).copied().collect();
        }
        let mut grad = vec![0.0; weights.len()];
        let loss = train::batch_loss(spec, weights, &obj, &data, None, Some(&mut grad), &mut Default::default());
        assert!(loss < 1e-20);
        assert!(grad.iter().all(|g| g.abs() <= 1e-6));
    }
}

#[test]
fn gradient_check_rejects_non_network_routers() {
    let ds = common::planted(16, 4, 2, 1, |e, m| (0.5 + 0.3 * e[m], 0.1));
    let r = fit_knn(&ds, &RouterConfig::default()).unwrap();
    assert!(gradient_check(&r, &ds, 1e-5, 0).is_err());
}

#[test]
fn training_reduces_loss_and_early_stops() {
    let ds = common::planted(120, 6, 3, 19, |e, m| (0.5 + 0.3 * e[m], 0.1 * (m + 1) as f64));
    let (train, val) = (ds.subset(&(0..100).collect::<Vec<_>>()).unwrap(), ds.subset(&(100..120).collect::<Vec<_>>()).unwrap());
    let cfg = RouterConfig { learning_rate: 0.05, epochs: 400, batch_size: 16, model_embed_dim: 8, early_stop_patience: 5, ..Default::default() };
    let r = fit_linear_mf(&train, Some(&val), &cfg).unwrap();
    assert!(*r.log.train_losses.last().unwrap() < r.log.initial_train_loss);
    assert_eq!(r.log.val_losses.len(), r.log.epochs_run);
    let best = r.log.val_losses[r.log.best_epoch - 1];
    assert!(r.log.val_losses.iter().all(|v| *v >= best));
    if r.log.epochs_run < cfg.epochs {
        assert_eq!(r.log.epochs_run - r.log.best_epoch, cfg.early_stop_patience);
    }
}

#[test]
fn divergence_reports_epoch() {
    let ds = common::planted(30, 4, 2, 20, |e, m| (0.5 + 0.3 * e[m], 100.0));
    let cfg = RouterConfig { learning_rate: 1e6, epochs: 50, hidden_width: 8, ..Default::default() };
    match fit_mlp_utility(&ds, None, &cfg) {
        Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected training error, got {:?}", other.map(|r| r.log)),
    }
}
