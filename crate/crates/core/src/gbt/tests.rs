use super::*;
use alloc::vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(seed: u64, n: usize, nf: usize, k: usize) -> CategoricalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = CategoricalDataset::uniform(nf, k).unwrap();
    for _ in 0..n {
        let x: Vec<usize> = (0..nf).map(|_| rng.gen_range(0..k)).collect();
        let y = (x[0] as f64) * 0.7 - (x[1 % nf] as f64 % 3.0) + rng.gen_range(-0.5..0.5);
        data.push(x, y).unwrap();
    }
    data
}

fn small_cfg(n_trees: usize) -> GbtConfig {
    GbtConfig {
        n_trees,
        min_samples_leaf: 5,
        ..GbtConfig::default()
    }
}

#[test]
fn constant_targets_give_constant_model() {
    let mut data = CategoricalDataset::uniform(3, 4).unwrap();
    for i in 0..30 {
        data.push(vec![i % 4, (i / 4) % 4, 1], 0.1).unwrap();
    }
    let m = fit(&data, &small_cfg(10)).unwrap();
    assert_eq!(m.base_score(), 0.1);
    assert_eq!(m.num_splits(), 0);
    for x in [[0, 0, 0], [3, 2, 1], [1, 1, 3]] {
        assert_eq!(m.predict(&x).unwrap(), 0.1);
    }
    assert_eq!(m.feature_importances(), vec![0.0; 3]);
    assert_eq!(m.trees().len(), 10);
}

#[test]
fn single_split_reproduces_binary_targets() {
    let data = CategoricalDataset::from_rows(vec![2], vec![vec![0], vec![1]], vec![0.0, 1.0]).unwrap();
    let cfg = GbtConfig {
        n_trees: 1,
        shrinkage: 1.0,
        min_samples_leaf: 1,
        ..GbtConfig::default()
    };
    let m = fit(&data, &cfg).unwrap();
    assert_eq!(m.predict(&[0]).unwrap(), 0.0);
    assert_eq!(m.predict(&[1]).unwrap(), 1.0);
}

#[test]
fn training_mse_is_non_increasing() {
    for seed in 0..3 {
        let data = random_dataset(seed, 200, 4, 6);
        let targets = data.targets().to_vec();
        let mut history = Vec::new();
        fit_with_callback(&data, &small_cfg(50), |_, pred| {
            let mse: f64 = pred.iter().zip(&targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>()
                / targets.len() as f64;
            history.push(mse);
        })
        .unwrap();
        assert_eq!(history.len(), 50);
        for w in history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
        assert!(history[49] < history[0]);
    }
}

#[test]
fn zero_tree_ensemble_predicts_base() {
    let m = TreeEnsemble::from_parts(vec![3, 3], 1.25, vec![], GbtConfig::default()).unwrap();
    assert_eq!(m.predict(&[2, 1]).unwrap(), 1.25);
}

#[test]
fn hand_built_tree_routes_by_membership() {
    let tree = Tree::new(
        vec![
            Node::Split {
                feature: 0,
                left_categories: CategorySet::singleton(2, 0),
                gain: 1.0,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: 2.0, samples: 1 },
            Node::Leaf { value: 1.0, samples: 1 },
        ],
        &[2],
    )
    .unwrap();
    let m = TreeEnsemble::from_parts(vec![2], 0.0, vec![tree], GbtConfig::default()).unwrap();
    assert_eq!(m.predict(&[0]).unwrap(), 2.0);
    assert_eq!(m.predict(&[1]).unwrap(), 1.0);
}

#[test]
fn malformed_trees_are_rejected() {
    let leaf = Node::Leaf { value: 0.0, samples: 1 };
    let full_split = Node::Split {
        feature: 0,
        left_categories: CategorySet::full(2),
        gain: 0.0,
        left: 1,
        right: 2,
    };
    assert!(Tree::new(vec![full_split, leaf.clone(), leaf.clone()], &[2]).is_err());
    let backwards = Node::Split {
        feature: 0,
        left_categories: CategorySet::singleton(2, 1),
        gain: 0.0,
        left: 2,
        right: 1,
    };
    assert!(Tree::new(vec![backwards, leaf.clone(), leaf], &[2]).is_err());
}

#[test]
fn mean_prediction_matches_mean_target() {
    let data = random_dataset(7, 300, 5, 5);
    let m = fit(&data, &small_cfg(40)).unwrap();
    let mean_pred: f64 = data.rows().iter().map(|x| m.predict(x).unwrap()).sum::<f64>() / 300.0;
    let mean_y: f64 = data.targets().iter().sum::<f64>() / 300.0;
    assert!((mean_pred - mean_y).abs() < 1e-10);
}

#[test]
fn importances_concentrate_on_the_only_informative_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = CategoricalDataset::uniform(5, 4).unwrap();
    for _ in 0..200 {
        let x: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
        let y = if x[3] >= 2 { 1.0 } else { -1.0 };
        data.push(x, y).unwrap();
    }
    let m = fit(&data, &small_cfg(5)).unwrap();
    assert_eq!(m.feature_importances(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn dominant_feature_has_larger_importance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut data = CategoricalDataset::uniform(2, 3).unwrap();
    for _ in 0..300 {
        let x = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
        let y = 3.0 * x[0] as f64 + 0.3 * x[1] as f64;
        data.push(x, y).unwrap();
    }
    let imp = fit(&data, &small_cfg(20)).unwrap().feature_importances();
    assert!(imp[0] > imp[1], "{imp:?}");
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_inputs_are_rejected() {
    let empty = CategoricalDataset::uniform(2, 2).unwrap();
    assert!(matches!(fit(&empty, &GbtConfig::default()), Err(crate::Error::InvalidInput(_))));
    let mut data = CategoricalDataset::uniform(2, 2).unwrap();
    assert!(data.push(vec![0, 2], 1.0).is_err());
    assert!(data.push(vec![0], 1.0).is_err());
    data.push(vec![0, 1], 1.0).unwrap();
    let m = fit(&data, &GbtConfig::default()).unwrap();
    assert!(m.predict(&[2, 0]).is_err());
    let bad = GbtConfig {
        shrinkage: 0.0,
        ..GbtConfig::default()
    };
    assert!(fit(&data, &bad).is_err());
}

#[test]
fn fitted_trees_respect_structural_limits() {
    let data = random_dataset(5, 400, 6, 8);
    let cfg = GbtConfig {
        n_trees: 60,
        min_samples_leaf: 20,
        ..GbtConfig::default()
    };
    let m = fit(&data, &cfg).unwrap();
    for tree in m.trees() {
        assert!(tree.num_leaves() <= cfg.max_leaves);
        assert!(tree.depth() <= cfg.interaction_depth);
        for node in tree.nodes() {
            if let Node::Leaf { samples, .. } = node {
                assert!(*samples >= cfg.min_samples_leaf);
            }
        }
    }
}

#[test]
fn fitting_is_deterministic() {
    let data = random_dataset(9, 150, 4, 5);
    let a = fit(&data, &small_cfg(30)).unwrap();
    let b = fit(&data, &small_cfg(30)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_feature_targets_recover_category_means() {
    // y is a function of feature 1 only; with shrinkage 1 the fit must land on
    // the per-category means.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let means = [0.5, -1.0, 2.0, 0.25];
    let mut data = CategoricalDataset::uniform(3, 4).unwrap();
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for i in 0..200 {
        let c = i % 4;
        let y = means[c];
        sums[c] += y;
        counts[c] += 1;
        data.push(vec![rng.gen_range(0..4), c, rng.gen_range(0..4)], y).unwrap();
    }
    let cfg = GbtConfig {
        n_trees: 10,
        shrinkage: 1.0,
        min_samples_leaf: 20,
        ..GbtConfig::default()
    };
    let m = fit(&data, &cfg).unwrap();
    for c in 0..4 {
        let expect = sums[c] / counts[c] as f64;
        let got = m.predict(&[0, c, 0]).unwrap();
        assert!((got - expect).abs() < 1e-12, "category {c}: {got} vs {expect}");
    }
}

#[test]
fn equal_gain_prefers_lowest_feature() {
    let mut data = CategoricalDataset::uniform(2, 2).unwrap();
    for i in 0..40 {
        let c = i % 2;
        data.push(vec![c, c], c as f64).unwrap();
    }
    let m = fit(&data, &small_cfg(1)).unwrap();
    match &m.trees()[0].nodes()[0] {
        Node::Split { feature, .. } => assert_eq!(*feature, 0),
        other => panic!("expected split, got {other:?}"),
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prediction_is_additive(seed in 0u64..1000, nf in 1usize..5, k in 2usize..6) {
            let data = random_dataset(seed, 80, nf, k);
            let m = fit(&data, &small_cfg(15)).unwrap();
            for x in data.rows().iter().take(10) {
                let mut acc = m.base_score();
                for t in m.trees() {
                    acc += t.value_for(x);
                }
                prop_assert_eq!(acc, m.predict(x).unwrap());
            }
            let imp = m.feature_importances();
            prop_assert!(imp.iter().all(|&v| v >= 0.0));
            if m.num_splits() > 0 {
                prop_assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
