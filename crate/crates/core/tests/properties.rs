mod common;

use llmroute_core::data::{compute_cost, split_indices, SplitSpec};
use llmroute_core::routers::{KnnIndex, KnnWeighting};
use llmroute_core::{argmax_utility, resolve_preset, utility, Embedding, Outcome, Pricing, Preset, QueryRecord, RoutingDataset, UtilityEstimate};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn estimate(m: usize) -> impl Strategy<Value = UtilityEstimate> {
    (prop::collection::vec(-10.0..10.0f64, m), prop::collection::vec(0.0..5.0f64, m)).prop_map(|(s, c)| UtilityEstimate::new(s, c).unwrap())
}

fn random_dataset(n: usize, dim: usize, n_models: usize, seed: u64) -> RoutingDataset {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let records = common::planted(n, dim, n_models, seed, |_, _| (0.0, 0.0))
        .records()
        .iter()
        .map(|r| QueryRecord {
            outcomes: (0..n_models).map(|_| Outcome::new(rng.random_range(0.0..1.0), rng.random_range(0.0..0.5)).unwrap()).collect(),
            ..r.clone()
        })
        .collect();
    RoutingDataset::new(common::catalog(n_models), records, "random").unwrap()
}

proptest! {
    #[test]
    fn utility_is_positively_homogeneous(s in -100.0..100.0f64, c in 0.0..100.0f64, lambda in 0.0..10.0f64, a in 0.0..10.0f64) {
        let lhs = utility(a * s, a * c, lambda).unwrap();
        let rhs = a * utility(s, c, lambda).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn argmax_ignores_common_score_shift(e in estimate(5), shift in -50.0..50.0f64, lambda in 0.0..3.0f64) {
        let shifted = UtilityEstimate::new(e.scores.iter().map(|s| s + shift).collect(), e.costs.clone()).unwrap();
        prop_assert_eq!(argmax_utility(&e, lambda).unwrap(), argmax_utility(&shifted, lambda).unwrap());
    }

    #[test]
    fn argmax_extremes(e in estimate(6)) {
        let best_score = e.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(e.scores[argmax_utility(&e, 0.0).unwrap()], best_score);
        let min_cost = e.costs.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(e.costs[argmax_utility(&e, 1e12).unwrap()], min_cost);
    }

    #[test]
    fn preset_ordering(c_max in 1e-9..1e6f64) {
        let low = resolve_preset(Preset::LowCost, c_max).unwrap();
        let bal = resolve_preset(Preset::Balanced, c_max).unwrap();
        let high = resolve_preset(Preset::HighPerformance, c_max).unwrap();
        prop_assert!(low > bal && bal > high);
    }

    #[test]
    fn cost_is_linear_in_tokens(i in 0u64..10_000_000, o in 0u64..10_000_000, ip in 0.0..100.0f64, op in 0.0..100.0f64) {
        let p = Pricing::new(ip, op).unwrap();
        let once = compute_cost(i, o, p);
        prop_assert!((compute_cost(2 * i, 2 * o, p) - 2.0 * once).abs() <= 1e-12 * once.max(1.0));
    }

    #[test]
    fn split_partitions(n in 10usize..500, seed in any::<u64>()) {
        let s = split_indices(n, &SplitSpec::with_seed(seed)).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), n / 10);
        prop_assert_eq!(s.test.len(), n / 5);
    }

    #[test]
    fn knn_full_k_is_global_mean(n in 1usize..40, seed in any::<u64>()) {
        let ds = random_dataset(n, 4, 3, seed);
        let index = KnnIndex::build(&ds, false).unwrap();
        let x = common::random_unit(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        for k in [n, n + 5] {
            let e = index.predict(&x, k, KnnWeighting::Uniform).unwrap();
            for m in 0..3 {
                let mean_s = ds.records().iter().map(|r| r.outcomes[m].score).sum::<f64>() / n as f64;
                let mean_c = ds.records().iter().map(|r| r.outcomes[m].cost).sum::<f64>() / n as f64;
                prop_assert!((e.scores[m] - mean_s).abs() <= 1e-12);
                prop_assert!((e.costs[m] - mean_c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn knn_is_convex_combination(n in 1usize..40, k in 1usize..15, seed in any::<u64>(), weighted in any::<bool>()) {
        let ds = random_dataset(n, 5, 3, seed);
        let index = KnnIndex::build(&ds, false).unwrap();
        let x = common::random_unit(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)), 5);
        let weighting = if weighted { KnnWeighting::Similarity } else { KnnWeighting::Uniform };
        let e = index.predict(&x, k, weighting).unwrap();
        let nb = index.neighbors(&x, k).unwrap();
        prop_assert_eq!(nb.len(), k.min(n));
        for m in 0..3 {
            let vals: Vec<f64> = nb.iter().map(|v| index.scores(v.index)[m]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e.scores[m] >= lo - 1e-12 && e.scores[m] <= hi + 1e-12);
        }
    }

    #[test]
    fn knn_is_rotation_invariant(n in 2usize..30, k in 1usize..10, seed in any::<u64>()) {
        let dim = 4;
        let ds = random_dataset(n, dim, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3));
        let g = DMatrix::from_fn(dim, dim, |_, _| common::random_unit(&mut rng, 1)[0] * rand::Rng::random_range(&mut rng, 0.1..1.0));
        let q = g.qr().q();
        let rotate = |v: &[f64]| (&q * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec();
        let rotated = ds
            .records()
            .iter()
            .map(|r| QueryRecord { embedding: Embedding::new(rotate(r.embedding.as_slice())).unwrap().normalized().unwrap(), ..r.clone() })
            .collect();
        let rds = RoutingDataset::new(ds.catalog().clone(), rotated, "rotated").unwrap();
        let (a, b) = (KnnIndex::build(&ds, false).unwrap(), KnnIndex::build(&rds, false).unwrap());
        let x = common::random_unit(&mut rng, dim);
        let (ea, eb) = (a.predict(&x, k, KnnWeighting::Uniform).unwrap(), b.predict(&rotate(&x), k, KnnWeighting::Uniform).unwrap());
        for m in 0..2 {
            prop_assert!((ea.scores[m] - eb.scores[m]).abs() <= 1e-9);
            prop_assert!((ea.costs[m] - eb.costs[m]).abs() <= 1e-9);
        }
    }
}
