use super::*;
use crate::task::{generate_face, FaceParams};
use alloc::vec;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

fn small_config() -> QaeConfig {
    QaeConfig {
        image_height: 16,
        image_width: 16,
        channels: 1,
        hidden: 6,
        latent_dim: 3,
        codebook_size: 4,
        beta: 0.25,
        learning_rate: 1e-3,
        batch_size: 4,
        seed: 3,
    }
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * c).map(|_| rng.gen::<f64>()).collect();
    Image::new(h, w, c, data).unwrap()
}

fn faces(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| generate_face(&FaceParams::sample(&mut rng, 5.0)).unwrap())
        .collect()
}

#[test]
fn zero_encoder_gives_zero_grid() {
    let cfg = QaeConfig::default();
    let m = QaeModel::from_params(cfg.clone(), vec![0.0; cfg.num_params()]).unwrap();
    let g = m.encode(&Image::zeros(16, 16, 1)).unwrap();
    assert_eq!((g.height, g.width, g.dim), (4, 4, 8));
    assert!(g.data.iter().all(|&v| v == 0.0));
}

#[test]
fn encoding_is_deterministic() {
    let m = QaeModel::new(QaeConfig::default()).unwrap();
    let x = random_image(16, 16, 1, 1);
    assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
    let z = m.encode_latent(&x).unwrap();
    assert_eq!(m.decode(&z).unwrap(), m.decode(&z).unwrap());
    assert_eq!(QaeModel::new(QaeConfig::default()).unwrap(), m);
}

#[test]
fn bias_free_encoder_is_positively_homogeneous() {
    // leaky ReLU commutes with positive scaling, so the encoder does too
    let cfg = QaeConfig::default();
    let mut m = QaeModel::new(cfg).unwrap();
    let lay = m.layout;
    let mut p = m.params().to_vec();
    for v in &mut p[lay.enc1_b..lay.enc2_w] {
        *v = 0.0;
    }
    for v in &mut p[lay.enc2_b..lay.dec1_w] {
        *v = 0.0;
    }
    m.set_params(p).unwrap();
    let x = random_image(16, 16, 1, 9);
    let mut scaled = x.clone();
    for v in scaled.data_mut() {
        *v *= 2.5;
    }
    let a = m.encode(&x).unwrap();
    let b = m.encode(&scaled).unwrap();
    for (u, v) in a.data.iter().zip(&b.data) {
        assert!((2.5 * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}

#[test]
fn quantize_examples() {
    let cb = Codebook::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let grid = |cells: &[f64]| ContinuousGrid {
        height: 1,
        width: cells.len() / 2,
        dim: 2,
        data: cells.to_vec(),
    };
    let (z, q) = quantize(&cb, &grid(&[0.2, 0.1, 0.5, 0.5, 0.9, 1.2])).unwrap();
    assert_eq!(z.codes(), &[0, 0, 1]);
    assert_eq!(q.data, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);

    let vectors: Vec<f64> = (0..10).flat_map(|k| [k as f64, -(k as f64)]).collect();
    let cb = Codebook::new(10, 2, vectors).unwrap();
    let (z, q) = quantize(&cb, &grid(&[7.0, -7.0])).unwrap();
    assert_eq!(z.codes(), &[7]);
    assert_eq!(q.data, vec![7.0, -7.0]);

    let bad = ContinuousGrid {
        height: 1,
        width: 1,
        dim: 3,
        data: vec![0.0; 3],
    };
    assert!(quantize(&cb, &bad).is_err());
}

#[test]
fn quantize_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (k, d) = (16, 8);
    let vectors: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cb = Codebook::new(k, d, vectors.clone()).unwrap();
    let cells = 10_000;
    let data: Vec<f64> = (0..cells * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let grid = ContinuousGrid {
        height: 100,
        width: 100,
        dim: d,
        data: data.clone(),
    };
    let (z, _) = quantize(&cb, &grid).unwrap();
    for (i, &code) in z.codes().iter().enumerate() {
        let x = &data[i * d..(i + 1) * d];
        let dist = |l: usize| -> f64 { (0..d).map(|j| (x[j] - vectors[l * d + j]).powi(2)).sum() };
        let best = (0..k).map(dist).fold(f64::INFINITY, f64::min);
        assert_eq!(dist(code), best);
        assert!((0..code).all(|l| dist(l) > best));
    }
}

#[test]
fn shapes_are_conserved() {
    let m = QaeModel::new(QaeConfig::default()).unwrap();
    let x = random_image(16, 16, 1, 2);
    let z = m.encode_latent(&x).unwrap();
    assert_eq!((z.height(), z.width()), (4, 4));
    assert!(z.codes().iter().all(|&c| c < 16));
    let y = m.decode(&z).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(m.encode(&random_image(8, 16, 1, 0)).is_err());
    assert!(m.decode(&LatentGrid::new(4, 4, vec![16; 16]).unwrap()).is_err());
    assert!(m.decode(&LatentGrid::new(2, 8, vec![0; 16]).unwrap()).is_err());
}

#[test]
fn vq_loss_terms() {
    let cfg = small_config();
    let m = QaeModel::new(cfg.clone()).unwrap();
    let batch = faces(3, 1);
    let r = m.vq_loss(&batch).unwrap();
    assert!(r.reconstruction >= 0.0 && r.codebook >= 0.0 && r.commitment >= 0.0);
    assert!((r.total - (r.reconstruction + r.codebook + cfg.beta * r.commitment)).abs() < 1e-15);

    let mut zero_beta = cfg.clone();
    zero_beta.beta = 0.0;
    let m0 = QaeModel::from_params(zero_beta, m.params().to_vec()).unwrap();
    let r0 = m0.vq_loss(&batch).unwrap();
    assert_eq!(r0.total, r0.reconstruction + r0.codebook);
    assert_eq!(r0.commitment, r.commitment);

    // zero encoder plus a zero codebook vector: no quantization error
    let mut p = m.params().to_vec();
    let lay = m.layout;
    for v in &mut p[lay.enc1_w..lay.dec1_w] {
        *v = 0.0;
    }
    for v in &mut p[lay.codebook..lay.codebook + cfg.latent_dim] {
        *v = 0.0;
    }
    let mz = QaeModel::from_params(cfg.clone(), p.clone()).unwrap();
    let rz = mz.vq_loss(&batch).unwrap();
    assert_eq!((rz.codebook, rz.commitment), (0.0, 0.0));

    // additionally a decoder that outputs its bias, reconstructing a flat image
    for v in &mut p[lay.dec1_w..lay.dec2_b] {
        *v = 0.0;
    }
    p[lay.dec2_b] = 0.25;
    let flat = Image::new(16, 16, 1, vec![0.25; 256]).unwrap();
    let mf = QaeModel::from_params(cfg, p).unwrap();
    assert_eq!(mf.vq_loss(&[flat]).unwrap().total, 0.0);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut cfg = small_config();
    cfg.learning_rate = 0.0;
    let mut m = QaeModel::new(cfg).unwrap();
    let before = m.params().to_vec();
    m.train_step(&faces(4, 2), Some(&[0.1, 0.2, 0.3, 0.4])).unwrap();
    assert_eq!(m.params(), &before[..]);
}

#[test]
fn uniform_weights_match_unweighted_step() {
    let batch = faces(4, 3);
    let mut a = QaeModel::new(small_config()).unwrap();
    let mut b = a.clone();
    let mut c = a.clone();
    a.train_step(&batch, None).unwrap();
    b.train_step(&batch, Some(&[2.0; 4])).unwrap();
    c.train_step(&batch, Some(&[0.25; 4])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn bad_weights_are_rejected() {
    let batch = faces(2, 4);
    let mut m = QaeModel::new(small_config()).unwrap();
    assert!(m.train_step(&batch, Some(&[0.0, 0.0])).is_err());
    assert!(m.train_step(&batch, Some(&[1.0, -1.0])).is_err());
    assert!(m.train_step(&batch, Some(&[1.0])).is_err());
    assert!(m.train_step(&[], None).is_err());
    assert!(m.fit_weighted(&batch, &[0.0, 0.0], 1, 0).is_err());
}

/// Largest relative error between analytic and central-difference gradients.
fn gradient_error(m: &QaeModel, batch: &[Image], weights: &[f64], mode: Quantization<'_>) -> f64 {
    let (_, grad) = m.loss_gradient(batch, Some(weights), mode).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let mut p = m.params().to_vec();
        p[i] += h;
        let up = QaeModel::from_params(m.config().clone(), p.clone()).unwrap();
        p[i] -= 2.0 * h;
        let down = QaeModel::from_params(m.config().clone(), p).unwrap();
        let fu = up.loss(batch, Some(weights), mode).unwrap().total;
        let fd = down.loss(batch, Some(weights), mode).unwrap().total;
        let numeric = (fu - fd) / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn gradients_match_finite_differences_identity() {
    let m = QaeModel::new(small_config()).unwrap();
    let batch = vec![random_image(16, 16, 1, 5), random_image(16, 16, 1, 6)];
    let err = gradient_error(&m, &batch, &[0.3, 0.7], Quantization::Identity);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradients_match_finite_differences_frozen_codes() {
    let m = QaeModel::new(small_config()).unwrap();
    let batch = vec![random_image(16, 16, 1, 7), random_image(16, 16, 1, 8)];
    let codes: Vec<LatentGrid> = batch.iter().map(|x| m.encode_latent(x).unwrap()).collect();
    let err = gradient_error(&m, &batch, &[0.5, 0.5], Quantization::Frozen(&codes));
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn straight_through_copies_decoder_gradient() {
    // With frozen codes equal to the nearest ones, the encoder receives only
    // the commitment gradient; straight-through adds the decoder-input gradient.
    let m = QaeModel::new(small_config()).unwrap();
    let batch = vec![random_image(16, 16, 1, 11)];
    let codes = vec![m.encode_latent(&batch[0]).unwrap()];
    let (_, st) = m.loss_gradient(&batch, None, Quantization::Nearest).unwrap();
    let (_, frozen) = m.loss_gradient(&batch, None, Quantization::Frozen(&codes)).unwrap();
    let lay = m.layout;
    assert_eq!(st[lay.dec1_w..lay.codebook], frozen[lay.dec1_w..lay.codebook]);
    assert_ne!(st[lay.enc1_w..lay.dec1_w], frozen[lay.enc1_w..lay.dec1_w]);
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let mut m = QaeModel::new(small_config()).unwrap();
    let before = m.clone();
    let hist = m.fit_weighted(&faces(5, 1), &[0.2; 5], 0, 4).unwrap();
    assert!(hist.is_empty());
    assert_eq!(m, before);
}

#[test]
fn one_hot_weights_sample_one_item() {
    let m = QaeModel::new(small_config()).unwrap();
    let batches = m.sampled_indices(6, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3, 1).unwrap();
    assert_eq!(batches.len(), 6);
    assert!(batches.iter().flatten().all(|&i| i == 2));

    // training on one-hot weights equals training on that item alone
    let data = faces(6, 5);
    let mut a = m.clone();
    a.fit_weighted(&data, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 2, 9).unwrap();
    let mut b = m.clone();
    for _ in 0..4 {
        b.train_step(&vec![data[2].clone(); 4], None).unwrap();
    }
    assert_eq!(a.params(), b.params());
}

#[test]
fn training_is_reproducible() {
    let data = faces(8, 6);
    let w = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
    let mut a = QaeModel::new(small_config()).unwrap();
    let mut b = a.clone();
    let ha = a.fit_weighted(&data, &w, 3, 21).unwrap();
    let hb = b.fit_weighted(&data, &w, 3, 21).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}

#[test]
fn smoothed_training_loss_decreases() {
    // Each epoch's loss comes from one resampled minibatch, so single epochs
    // are noisy; means over 5-epoch blocks decrease during the first 40.
    let mut m = QaeModel::new(QaeConfig::default()).unwrap();
    let data = faces(20, 7);
    let hist = m.fit_weighted(&data, &[1.0; 20], 40, 0).unwrap();
    let window: Vec<f64> = hist.chunks(5).map(|c| c.iter().map(|r| r.total).sum::<f64>() / 5.0).collect();
    for pair in window.windows(2) {
        assert!(pair[1] <= pair[0], "{window:?}");
    }
}

#[test]
fn round_trip_after_training() {
    let cfg = QaeConfig {
        batch_size: 10,
        learning_rate: 3e-3,
        ..QaeConfig::default()
    };
    let mut m = QaeModel::new(cfg).unwrap();
    let data = faces(10, 8);
    m.fit_weighted(&data, &[1.0; 10], 400, 1).unwrap();
    let mse: f64 = data
        .iter()
        .map(|x| {
            let y = m.reconstruct(x).unwrap();
            x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 256.0
        })
        .sum::<f64>()
        / 10.0;
    assert!(mse < 0.05, "round-trip MSE {mse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantized_index_is_a_nearest_vector(
        vectors in proptest::collection::vec(-2.0f64..2.0, 12),
        cell in proptest::collection::vec(-2.0f64..2.0, 3),
    ) {
        let cb = Codebook::new(4, 3, vectors.clone()).unwrap();
        let grid = ContinuousGrid { height: 1, width: 1, dim: 3, data: cell.clone() };
        let (z, q) = quantize(&cb, &grid).unwrap();
        let dist = |l: usize| -> f64 { (0..3).map(|j| (cell[j] - vectors[l * 3 + j]).powi(2)).sum() };
        let k = z.codes()[0];
        prop_assert!((0..4).all(|l| dist(k) <= dist(l)));
        prop_assert_eq!(q.data.as_slice(), cb.vector(k));
    }
}
