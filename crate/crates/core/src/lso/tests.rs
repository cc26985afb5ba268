use super::*;
use crate::qae::QaeConfig;
use crate::task::{make_dataset, SmileScorer};
use crate::treeopt::brute_force_maximize;
use alloc::vec;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn rank_weight_examples() {
    assert_eq!(rank_weights(&[4.2], 1e-3).unwrap(), vec![1.0]);

    let w = rank_weights(&[3.0, 1.0, 2.0], 1.0).unwrap();
    let raw = [1.0 / 3.0, 1.0 / 5.0, 1.0 / 4.0];
    let total: f64 = raw.iter().sum();
    for (a, r) in w.iter().zip(raw) {
        assert!(close(*a, r / total, 1e-15));
    }
    assert!(close(w[0], 0.425_531_914_893_617, 1e-10));
    assert!(close(w[1], 0.255_319_148_936_170_2, 1e-10));
    assert!(close(w[2], 0.319_148_936_170_212_8, 1e-10));

    let scores: Vec<f64> = (0..100).map(|i| (i * 37 % 100) as f64).collect();
    let w = rank_weights(&scores, 1e6).unwrap();
    let spread = w.iter().copied().fold(f64::MIN, f64::max) - w.iter().copied().fold(f64::MAX, f64::min);
    assert!(spread < 1e-5);
}

#[test]
fn rank_weight_ties_and_errors() {
    let w = rank_weights(&[2.0, 5.0, 2.0, 1.0], 0.5).unwrap();
    assert_eq!(w[0], w[2]);
    // ranks 1, 0, 1, 3
    let kn = 2.0;
    let raw = [1.0 / (kn + 1.0), 1.0 / kn, 1.0 / (kn + 1.0), 1.0 / (kn + 3.0)];
    let total: f64 = raw.iter().sum();
    for (a, r) in w.iter().zip(raw) {
        assert!(close(*a, r / total, 1e-15));
    }
    assert!(rank_weights(&[1.0, f64::NAN], 1.0).is_err());
    assert!(rank_weights(&[1.0, f64::INFINITY], 1.0).is_err());
    assert!(rank_weights(&[], 1.0).is_err());
    assert!(rank_weights(&[1.0], 0.0).is_err());
}

#[test]
fn free_variable_selection() {
    assert_eq!(select_free_variables(&[0.0, 1.0, 0.5], 2).unwrap(), vec![1, 2]);
    assert_eq!(select_free_variables(&[0.25; 4], 3).unwrap(), vec![0, 1, 2]);
    assert_eq!(select_free_variables(&[0.1, 0.7, 0.2], 3).unwrap(), vec![0, 1, 2]);
    assert_eq!(select_free_variables(&[0.3, 0.1, 0.3, 0.3], 2).unwrap(), vec![0, 2]);
    assert!(select_free_variables(&[0.5, 0.5], 3).is_err());
}

#[test]
fn topk_examples() {
    let v = [1.0, 3.0, 2.0, 0.5, 4.0];
    assert_eq!(topk_curve(&v, 1), vec![Some(1.0), Some(3.0), Some(3.0), Some(3.0), Some(4.0)]);
    assert_eq!(topk_curve(&[1.0, 3.0, 2.0], 2), vec![None, Some(1.0), Some(2.0)]);
    assert_eq!(topk_curve(&[2.5; 6], 3), vec![None, None, Some(2.5), Some(2.5), Some(2.5), Some(2.5)]);
    assert!(topk_curve(&[], 3).is_empty());
}

#[test]
fn dataset_construction() {
    let im = || Image::zeros(16, 16, 1);
    let d = WeightedDataset::ranked(vec![im(), im(), im()], vec![3.0, 1.0, 2.0], 1.0).unwrap();
    assert!(close(d.weights().iter().sum::<f64>(), 1.0, 1e-12));
    assert_eq!(d.max_score(), 3.0);
    assert!(WeightedDataset::uniform(vec![], vec![]).is_err());
    assert!(WeightedDataset::uniform(vec![im()], vec![1.0, 2.0]).is_err());
    assert!(WeightedDataset::uniform(vec![im(), Image::zeros(8, 8, 1)], vec![1.0, 2.0]).is_err());
}

fn tiny_qae() -> QaeModel {
    QaeModel::new(QaeConfig {
        hidden: 6,
        latent_dim: 3,
        codebook_size: 4,
        batch_size: 8,
        seed: 5,
        ..QaeConfig::default()
    })
    .unwrap()
}

fn tiny_config(budget: usize, retrain_every: usize) -> LsoConfig {
    LsoConfig {
        query_budget: budget,
        retrain_every,
        free_vars: 3,
        seed: 11,
        finetune_epochs: 1,
        surrogate: GbtConfig {
            n_trees: 15,
            min_samples_leaf: 3,
            ..GbtConfig::default()
        },
        ..LsoConfig::default()
    }
}

#[test]
fn schedule_and_growth() {
    let data = make_dataset(24, 2.0, 1).unwrap();
    let scorer = SmileScorer::new();

    let out = run(&tiny_config(3, 5), &scorer, tiny_qae(), data.clone()).unwrap();
    assert!(out.trajectory.retrain_events.is_empty());
    assert_eq!(out.trajectory.records.len(), 3);
    assert_eq!(out.dataset.len(), 27);
    assert_eq!(out.model, tiny_qae());

    let out = run(&tiny_config(10, 5), &scorer, tiny_qae(), data.clone()).unwrap();
    assert_eq!(out.trajectory.retrain_events, vec![5, 10]);
    assert_eq!(out.dataset.len(), 34);
    assert_ne!(out.model, tiny_qae());
    assert!(close(out.dataset.weights().iter().sum::<f64>(), 1.0, 1e-12));

    let out = run(&tiny_config(12, 5), &scorer, tiny_qae(), data.clone()).unwrap();
    assert_eq!(out.trajectory.retrain_events.len(), 2);
    assert_eq!(out.dataset.len(), 36);

    let empty = run(&tiny_config(0, 5), &scorer, tiny_qae(), data).unwrap();
    assert!(empty.trajectory.records.is_empty());
}

#[test]
fn disabled_retraining_keeps_model() {
    let data = make_dataset(24, 2.0, 2).unwrap();
    let cfg = LsoConfig {
        retrain: RetrainMode::Disabled,
        ..tiny_config(10, 5)
    };
    let out = run(&cfg, &SmileScorer::new(), tiny_qae(), data).unwrap();
    assert!(out.trajectory.retrain_events.is_empty());
    assert_eq!(out.model, tiny_qae());
    assert_eq!(out.dataset.len(), 34);
}

#[test]
fn runs_are_reproducible() {
    let data = make_dataset(24, 2.0, 3).unwrap();
    let scorer = SmileScorer::new();
    for mode in [RetrainMode::Weighted, RetrainMode::Uniform] {
        let cfg = LsoConfig {
            retrain: mode,
            anchor: AnchorSampling::Weighted,
            ..tiny_config(10, 5)
        };
        let a = run(&cfg, &scorer, tiny_qae(), data.clone()).unwrap();
        let b = run(&cfg, &scorer, tiny_qae(), data.clone()).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        let bits = |t: &Trajectory| t.f_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.trajectory), bits(&b.trajectory));
        assert_eq!(a.model, b.model);
    }
}

#[test]
fn records_are_consistent_and_optimal() {
    let data = make_dataset(24, 2.0, 4).unwrap();
    let scorer = SmileScorer::new();
    let cfg = tiny_config(8, 4);
    let mut seen = Vec::new();
    let out = run_observed(&cfg, &scorer, tiny_qae(), data, |p| {
        seen.push((p.iteration, p.surrogate.clone(), p.domain.clone()));
    })
    .unwrap();
    assert_eq!(seen.len(), 8);
    for (rec, (it, h, dom)) in out.trajectory.records.iter().zip(&seen) {
        assert_eq!(rec.iteration, *it);
        assert_eq!(rec.free_variables, dom.free_variables());
        let z = rec.latent.codes();
        for (j, (&c, &a)) in z.iter().zip(&rec.anchor).enumerate() {
            if !rec.free_variables.contains(&j) {
                assert_eq!(c, a);
            }
        }
        assert_eq!(rec.surrogate_value, h.predict(z).unwrap());
        assert_eq!(rec.surrogate_value, brute_force_maximize(h, dom).unwrap().value);
        assert_eq!(rec.f_value, scorer.score(&rec.image).unwrap());
    }
    let t10 = out.trajectory.top10();
    assert!(t10.iter().take(9).all(Option::is_none));
}

#[test]
fn all_variables_free_ignores_anchor() {
    let data = make_dataset(24, 2.0, 5).unwrap();
    let cfg = LsoConfig {
        free_vars: 16,
        ..tiny_config(3, 5)
    };
    let scorer = SmileScorer::new();
    let mut domains = Vec::new();
    let out = run_observed(&cfg, &scorer, tiny_qae(), data, |p| domains.push(p.domain.clone())).unwrap();
    for (rec, dom) in out.trajectory.records.iter().zip(&domains) {
        assert_eq!(rec.free_variables, (0..16).collect::<Vec<_>>());
        assert_eq!(*dom, VariableDomain::full(&[4; 16]));
    }
}

#[test]
fn flat_surrogate_proposes_lexicographic_minimum() {
    let data = WeightedDataset::uniform(vec![Image::zeros(16, 16, 1); 10], vec![1.5; 10]).unwrap();
    let flat = |_: &Image| -> Result<f64> { Ok(1.5) };
    let out = run(&tiny_config(4, 10), &flat, tiny_qae(), data).unwrap();
    for rec in &out.trajectory.records {
        let z = rec.latent.codes();
        assert_eq!(z.len(), 16);
        for (j, (&c, &a)) in z.iter().zip(&rec.anchor).enumerate() {
            let expect = if rec.free_variables.contains(&j) { 0 } else { a };
            assert_eq!(c, expect);
        }
        assert_eq!(rec.surrogate_value, 1.5);
    }
}

#[test]
fn refit_moves_prediction_toward_observation() {
    let data = make_dataset(40, 2.0, 6).unwrap();
    let scorer = SmileScorer::new();
    let mut state = LsoState::new(tiny_config(6, 100), &scorer, tiny_qae(), data).unwrap();
    for _ in 0..6 {
        let rec = state.step(&mut |_| {}).unwrap();
        let after = state.surrogate().predict(rec.latent.codes()).unwrap();
        assert!((after - rec.f_value).abs() <= (rec.surrogate_value - rec.f_value).abs() + 1e-12);
    }
}

#[test]
fn objective_failures_propagate() {
    let data = make_dataset(10, 2.0, 7).unwrap();
    let broken = |_: &Image| -> Result<f64> { Ok(f64::NAN) };
    assert!(run(&tiny_config(2, 5), &broken, tiny_qae(), data.clone()).is_err());
    let bad = LsoConfig {
        free_vars: 17,
        ..tiny_config(2, 5)
    };
    assert!(run(&bad, &SmileScorer::new(), tiny_qae(), data.clone()).is_err());
    let bad = LsoConfig {
        retrain_every: 0,
        ..tiny_config(2, 5)
    };
    assert!(run(&bad, &SmileScorer::new(), tiny_qae(), data).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_are_normalized_and_rank_monotone(
        scores in proptest::collection::vec(-10.0f64..10.0, 1..60),
        k in 1e-4f64..10.0,
    ) {
        let w = rank_weights(&scores, k).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..scores.len() {
            prop_assert!(w[i] >= 0.0);
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    prop_assert!(w[i] > w[j]);
                }
                if scores[i] == scores[j] {
                    prop_assert_eq!(w[i], w[j]);
                }
            }
        }
    }

    #[test]
    fn topk_curves_are_monotone(values in proptest::collection::vec(-5.0f64..5.0, 0..80)) {
        let c10 = topk_curve(&values, 10);
        let c50 = topk_curve(&values, 50);
        for m in 1..values.len() {
            if let (Some(a), Some(b)) = (c10[m - 1], c10[m]) {
                prop_assert!(b >= a);
            }
            if let (Some(a), Some(b)) = (c50[m - 1], c50[m]) {
                prop_assert!(b >= a);
            }
        }
        for (a, b) in c10.iter().zip(&c50) {
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!(a >= b);
            }
        }
        // brute-force oracle
        for m in 0..values.len() {
            let mut prefix = values[..=m].to_vec();
            prefix.sort_by(|a, b| b.total_cmp(a));
            prop_assert_eq!(c10[m], prefix.get(9).copied());
        }
    }
}
