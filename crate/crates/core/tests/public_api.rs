//! End-to-end use of the public API, the way a downstream crate sees it.

use proptest::prelude::*;
use treelso_core::gbt::fit;
use treelso_core::lso::{self, RetrainMode};
use treelso_core::task::{generate_face, make_dataset, FaceParams, SmileScorer};
use treelso_core::treeopt::{brute_force_maximize, maximize};
use treelso_core::{CategoricalDataset, GbtConfig, Image, LsoConfig, QaeConfig, QaeModel, VariableDomain};

#[test]
fn surrogate_over_latent_codes_is_maximized_exactly() {
    let data = make_dataset(60, 2.0, 11).unwrap();
    let model = QaeModel::new(QaeConfig::default()).unwrap();
    let rows: Vec<Vec<usize>> = data
        .images()
        .iter()
        .map(|x| model.encode_latent(x).unwrap().into_codes())
        .collect();
    let k = model.config().codebook_size;
    let n = rows[0].len();
    let cfg = GbtConfig {
        n_trees: 50,
        min_samples_leaf: 3,
        ..GbtConfig::default()
    };
    let h = fit(&CategoricalDataset::from_rows(vec![k; n], rows.clone(), data.scores().to_vec()).unwrap(), &cfg).unwrap();
    let free = lso::select_free_variables(&h.feature_importances(), 3).unwrap();
    let dom = VariableDomain::trust_region(h.domain_sizes(), &rows[0], &free).unwrap();
    let exact = maximize(&h, &dom).unwrap();
    let slow = brute_force_maximize(&h, &dom).unwrap();
    assert_eq!(exact.value, slow.value);
    assert_eq!(exact.assignment, slow.assignment);
    let decoded = model.decode_codes(&exact.assignment).unwrap();
    assert_eq!(decoded.shape(), (16, 16, 1));
}

#[test]
fn closures_are_objectives() {
    let data = make_dataset(30, 2.0, 2).unwrap();
    let model = QaeModel::new(QaeConfig::default()).unwrap();
    let brightness = |x: &Image| -> treelso_core::Result<f64> { Ok(x.data().iter().sum::<f64>() / x.data().len() as f64) };
    let cfg = LsoConfig {
        query_budget: 4,
        retrain_every: 2,
        retrain: RetrainMode::Uniform,
        surrogate: GbtConfig {
            n_trees: 20,
            min_samples_leaf: 3,
            ..GbtConfig::default()
        },
        ..LsoConfig::default()
    };
    let out = lso::run(&cfg, &brightness, model, data).unwrap();
    assert_eq!(out.trajectory.records.len(), 4);
    assert_eq!(out.trajectory.retrain_events, [2, 4]);
    assert_eq!(out.dataset.len(), 34);
    for r in &out.trajectory.records {
        assert_eq!(r.f_value, brightness(&r.image).unwrap());
    }
}

#[test]
fn scorer_tracks_the_generated_degree() {
    let scorer = SmileScorer::new();
    let mut last = f64::NEG_INFINITY;
    for i in 0..=10 {
        let theta = i as f64 * 0.5;
        let s = scorer.score(&generate_face(&FaceParams::with_degree(theta)).unwrap()).unwrap();
        assert!((s - theta).abs() <= 0.25, "theta {theta}: {s}");
        assert!(s >= last);
        last = s;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn truncated_datasets_stay_below_the_cap(seed in 0u64..1000, n in 1usize..20) {
        let d = make_dataset(n, 2.0, seed).unwrap();
        prop_assert_eq!(d.len(), n);
        prop_assert!(d.scores().iter().all(|&s| s <= 2.25));
        let total: f64 = d.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
