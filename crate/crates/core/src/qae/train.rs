//! Forward/backward passes, VQ losses and optimization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{leaky, nearest, LatentGrid, QaeModel, LEAKY_SLOPE};
use crate::error::{invalid, Result};
use crate::image::Image;

/// Per-batch loss terms. With sample weights these are weighted means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    /// Mean squared pixel error of the reconstruction.
    pub reconstruction: f64,
    /// Mean over latent cells of the squared distance between encoder output
    /// and chosen code; only the codebook receives its gradient.
    pub codebook: f64,
    /// Same value as `codebook`; only the encoder receives its gradient.
    pub commitment: f64,
    /// `reconstruction + codebook + beta * commitment`.
    pub total: f64,
}

/// How the decoder input is obtained from the encoder output when computing
/// gradients.
#[derive(Debug, Clone, Copy)]
pub enum Quantization<'a> {
    /// Nearest codebook vector with straight-through gradients: the decoder
    /// input gradient is copied onto the encoder output, and the codebook only
    /// learns through its own loss term. This is the training mode.
    Nearest,
    /// The decoder reads the encoder output directly; only the reconstruction
    /// term exists. Gradients are exact.
    Identity,
    /// Codes are fixed per sample; the decoder input is the codebook vector,
    /// which therefore receives the reconstruction gradient. Gradients are the
    /// exact gradients of the total loss for those codes.
    Frozen(&'a [LatentGrid]),
}

pub(crate) struct EncoderPass {
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pub latent: Vec<f64>,
}

pub(crate) struct DecoderPass {
    pre3: Vec<f64>,
    h3: Vec<f64>,
    /// Unclamped decoder output.
    pub output: Image,
}

pub(crate) fn encoder_forward(m: &QaeModel, image: &Image) -> EncoderPass {
    let cfg = &m.config;
    let lay = &m.layout;
    let p = &m.params;
    let (c, hid, d) = (cfg.channels, cfg.hidden, cfg.latent_dim);
    let (mh, mw) = (cfg.image_height / 2, cfg.image_width / 2);
    let (lh, lw) = (mh / 2, mw / 2);

    let mut pre1 = vec![0.0; mh * mw * hid];
    let mut h1 = vec![0.0; mh * mw * hid];
    let mut taps = vec![0.0; 4 * c];
    for my in 0..mh {
        for mx in 0..mw {
            for dy in 0..2 {
                for dx in 0..2 {
                    for ch in 0..c {
                        taps[(dy * 2 + dx) * c + ch] = image.get(2 * my + dy, 2 * mx + dx, ch);
                    }
                }
            }
            let mid = my * mw + mx;
            for o in 0..hid {
                let w = &p[lay.enc1_w + o * 4 * c..lay.enc1_w + (o + 1) * 4 * c];
                let s = p[lay.enc1_b + o] + w.iter().zip(&taps).map(|(a, b)| a * b).sum::<f64>();
                pre1[mid * hid + o] = s;
                h1[mid * hid + o] = leaky(s);
            }
        }
    }

    let mut latent = vec![0.0; lh * lw * d];
    let mut taps = vec![0.0; 4 * hid];
    for ly in 0..lh {
        for lx in 0..lw {
            for dy in 0..2 {
                for dx in 0..2 {
                    let mid = (2 * ly + dy) * mw + 2 * lx + dx;
                    let s = dy * 2 + dx;
                    taps[s * hid..(s + 1) * hid].copy_from_slice(&h1[mid * hid..(mid + 1) * hid]);
                }
            }
            let cell = ly * lw + lx;
            for k in 0..d {
                let w = &p[lay.enc2_w + k * 4 * hid..lay.enc2_w + (k + 1) * 4 * hid];
                latent[cell * d + k] = p[lay.enc2_b + k] + w.iter().zip(&taps).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    EncoderPass { pre1, h1, latent }
}

pub(crate) fn decoder_forward(m: &QaeModel, zq: &[f64]) -> DecoderPass {
    let cfg = &m.config;
    let lay = &m.layout;
    let p = &m.params;
    let (c, hid, d) = (cfg.channels, cfg.hidden, cfg.latent_dim);
    let (mh, mw) = (cfg.image_height / 2, cfg.image_width / 2);
    let (lh, lw) = (mh / 2, mw / 2);

    let mut pre3 = vec![0.0; mh * mw * hid];
    let mut h3 = vec![0.0; mh * mw * hid];
    for ly in 0..lh {
        for lx in 0..lw {
            let cell = ly * lw + lx;
            let z = &zq[cell * d..(cell + 1) * d];
            for dy in 0..2 {
                for dx in 0..2 {
                    let s = dy * 2 + dx;
                    let mid = (2 * ly + dy) * mw + 2 * lx + dx;
                    for o in 0..hid {
                        let row = lay.dec1_w + (s * hid + o) * d;
                        let v = p[lay.dec1_b + o] + p[row..row + d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
                        pre3[mid * hid + o] = v;
                        h3[mid * hid + o] = leaky(v);
                    }
                }
            }
        }
    }

    let mut output = Image::zeros(cfg.image_height, cfg.image_width, c);
    for my in 0..mh {
        for mx in 0..mw {
            let mid = my * mw + mx;
            let hv = &h3[mid * hid..(mid + 1) * hid];
            for dy in 0..2 {
                for dx in 0..2 {
                    let s = dy * 2 + dx;
                    for ch in 0..c {
                        let row = lay.dec2_w + (s * c + ch) * hid;
                        let v = p[lay.dec2_b + ch] + p[row..row + hid].iter().zip(hv).map(|(a, b)| a * b).sum::<f64>();
                        output.set(2 * my + dy, 2 * mx + dx, ch, v);
                    }
                }
            }
        }
    }
    DecoderPass { pre3, h3, output }
}

/// Backpropagates `g_out` (gradient w.r.t. the unclamped output) through the
/// decoder, accumulating parameter gradients and returning the gradient w.r.t.
/// the decoder input.
fn decoder_backward(m: &QaeModel, zq: &[f64], pass: &DecoderPass, g_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let cfg = &m.config;
    let lay = &m.layout;
    let p = &m.params;
    let (c, hid, d) = (cfg.channels, cfg.hidden, cfg.latent_dim);
    let (mh, mw) = (cfg.image_height / 2, cfg.image_width / 2);
    let (lh, lw) = (mh / 2, mw / 2);
    let width = cfg.image_width;

    let mut g_h3 = vec![0.0; mh * mw * hid];
    for my in 0..mh {
        for mx in 0..mw {
            let mid = my * mw + mx;
            for dy in 0..2 {
                for dx in 0..2 {
                    let s = dy * 2 + dx;
                    for ch in 0..c {
                        let g = g_out[((2 * my + dy) * width + 2 * mx + dx) * c + ch];
                        if g == 0.0 {
                            continue;
                        }
                        grad[lay.dec2_b + ch] += g;
                        let row = lay.dec2_w + (s * c + ch) * hid;
                        for o in 0..hid {
                            grad[row + o] += g * pass.h3[mid * hid + o];
                            g_h3[mid * hid + o] += g * p[row + o];
                        }
                    }
                }
            }
        }
    }

    let mut g_zq = vec![0.0; lh * lw * d];
    for ly in 0..lh {
        for lx in 0..lw {
            let cell = ly * lw + lx;
            for dy in 0..2 {
                for dx in 0..2 {
                    let s = dy * 2 + dx;
                    let mid = (2 * ly + dy) * mw + 2 * lx + dx;
                    for o in 0..hid {
                        let slope = if pass.pre3[mid * hid + o] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                        let g = g_h3[mid * hid + o] * slope;
                        if g == 0.0 {
                            continue;
                        }
                        grad[lay.dec1_b + o] += g;
                        let row = lay.dec1_w + (s * hid + o) * d;
                        for k in 0..d {
                            grad[row + k] += g * zq[cell * d + k];
                            g_zq[cell * d + k] += g * p[row + k];
                        }
                    }
                }
            }
        }
    }
    g_zq
}

fn encoder_backward(m: &QaeModel, image: &Image, pass: &EncoderPass, g_latent: &[f64], grad: &mut [f64]) {
    let cfg = &m.config;
    let lay = &m.layout;
    let p = &m.params;
    let (c, hid, d) = (cfg.channels, cfg.hidden, cfg.latent_dim);
    let (mh, mw) = (cfg.image_height / 2, cfg.image_width / 2);
    let (lh, lw) = (mh / 2, mw / 2);

    let mut g_h1 = vec![0.0; mh * mw * hid];
    for ly in 0..lh {
        for lx in 0..lw {
            let cell = ly * lw + lx;
            for k in 0..d {
                let g = g_latent[cell * d + k];
                if g == 0.0 {
                    continue;
                }
                grad[lay.enc2_b + k] += g;
                let row = lay.enc2_w + k * 4 * hid;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let s = dy * 2 + dx;
                        let mid = (2 * ly + dy) * mw + 2 * lx + dx;
                        for o in 0..hid {
                            grad[row + s * hid + o] += g * pass.h1[mid * hid + o];
                            g_h1[mid * hid + o] += g * p[row + s * hid + o];
                        }
                    }
                }
            }
        }
    }

    for my in 0..mh {
        for mx in 0..mw {
            let mid = my * mw + mx;
            for o in 0..hid {
                let slope = if pass.pre1[mid * hid + o] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                let g = g_h1[mid * hid + o] * slope;
                if g == 0.0 {
                    continue;
                }
                grad[lay.enc1_b + o] += g;
                let row = lay.enc1_w + o * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        for ch in 0..c {
                            grad[row + (dy * 2 + dx) * c + ch] += g * image.get(2 * my + dy, 2 * mx + dx, ch);
                        }
                    }
                }
            }
        }
    }
}

/// Loss of one sample; adds `weight * d(loss)/d(params)` to `grad` when given.
fn sample_loss(m: &QaeModel, image: &Image, mode: Quantization<'_>, index: usize, weight: f64, grad: Option<&mut [f64]>) -> LossRecord {
    let cfg = &m.config;
    let d = cfg.latent_dim;
    let cb_off = m.layout.codebook;
    let enc = encoder_forward(m, image);
    let cells = enc.latent.len() / d;

    let codes: Option<Vec<usize>> = match mode {
        Quantization::Nearest => Some(
            (0..cells)
                .map(|i| nearest(m.codebook_slice(), d, &enc.latent[i * d..(i + 1) * d]))
                .collect(),
        ),
        Quantization::Frozen(grids) => Some(grids[index].codes().to_vec()),
        Quantization::Identity => None,
    };
    let zq: Vec<f64> = match &codes {
        Some(codes) => codes
            .iter()
            .flat_map(|&k| m.params[cb_off + k * d..cb_off + (k + 1) * d].iter().copied())
            .collect(),
        None => enc.latent.clone(),
    };
    let dec = decoder_forward(m, &zq);

    let pixels = dec.output.data().len() as f64;
    let recon = dec
        .output
        .data()
        .iter()
        .zip(image.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pixels;
    let elems = cells as f64;
    let quant = match &codes {
        Some(_) => enc.latent.iter().zip(&zq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / elems,
        None => 0.0,
    };
    let record = LossRecord {
        reconstruction: recon,
        codebook: quant,
        commitment: quant,
        total: recon + quant + cfg.beta * quant,
    };

    if let Some(grad) = grad {
        let g_out: Vec<f64> = dec
            .output
            .data()
            .iter()
            .zip(image.data())
            .map(|(a, b)| weight * 2.0 * (a - b) / pixels)
            .collect();
        let g_zq = decoder_backward(m, &zq, &dec, &g_out, grad);
        let mut g_latent = vec![0.0; enc.latent.len()];
        match (&mode, &codes) {
            (Quantization::Identity, _) => g_latent.copy_from_slice(&g_zq),
            (Quantization::Nearest, Some(codes)) | (Quantization::Frozen(_), Some(codes)) => {
                // Straight-through: the codebook term only moves e_k, the
                // commitment term only moves the encoder, and the decoder
                // input gradient is copied onto the encoder output. Frozen:
                // plain derivatives of both terms, decoder gradient to e_k.
                let straight_through = matches!(mode, Quantization::Nearest);
                let (to_code, to_latent) = if straight_through { (1.0, cfg.beta) } else { (1.0 + cfg.beta, 1.0 + cfg.beta) };
                for (cell, &k) in codes.iter().enumerate() {
                    for j in 0..d {
                        let i = cell * d + j;
                        let g = weight * 2.0 * (enc.latent[i] - zq[i]) / elems;
                        grad[cb_off + k * d + j] -= to_code * g;
                        g_latent[i] += to_latent * g;
                        if straight_through {
                            g_latent[i] += g_zq[i];
                        } else {
                            grad[cb_off + k * d + j] += g_zq[i];
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        encoder_backward(m, image, &enc, &g_latent, grad);
    }
    record
}

pub(crate) fn normalize_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    let Some(w) = weights else {
        return Ok(vec![1.0 / n as f64; n]);
    };
    if w.len() != n {
        return Err(invalid(format!("{} weights for {n} samples", w.len())));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("sample weights must be finite and non-negative"));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(invalid("sample weights are all zero"));
    }
    if w.iter().all(|&v| v == w[0]) {
        return Ok(vec![1.0 / n as f64; n]);
    }
    Ok(w.iter().map(|v| v / total).collect())
}

impl QaeModel {
    /// Unweighted mean losses over a batch, using nearest-code quantization.
    pub fn vq_loss(&self, batch: &[Image]) -> Result<LossRecord> {
        self.batch_loss(batch, None, Quantization::Nearest, false).map(|(r, _)| r)
    }

    /// Weighted batch loss and its gradient with respect to the flat
    /// parameter vector. `weights` are normalized to sum to one; `None`
    /// means uniform.
    pub fn loss_gradient(&self, batch: &[Image], weights: Option<&[f64]>, mode: Quantization<'_>) -> Result<(LossRecord, Vec<f64>)> {
        let (r, g) = self.batch_loss(batch, weights, mode, true)?;
        Ok((r, g.expect("gradient requested")))
    }

    /// Weighted batch loss without gradients.
    pub fn loss(&self, batch: &[Image], weights: Option<&[f64]>, mode: Quantization<'_>) -> Result<LossRecord> {
        self.batch_loss(batch, weights, mode, false).map(|(r, _)| r)
    }

    fn batch_loss(&self, batch: &[Image], weights: Option<&[f64]>, mode: Quantization<'_>, with_grad: bool) -> Result<(LossRecord, Option<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        for img in batch {
            self.check_image(img)?;
        }
        if let Quantization::Frozen(grids) = mode {
            let (h, w) = self.latent_shape();
            if grids.len() != batch.len()
                || grids
                    .iter()
                    .any(|g| g.height() != h || g.width() != w || g.codes().iter().any(|&c| c >= self.config.codebook_size))
            {
                return Err(invalid("frozen codes do not match the batch"));
            }
        }
        let w = normalize_weights(weights, batch.len())?;
        let mut grad = if with_grad { Some(vec![0.0; self.params.len()]) } else { None };
        let mut acc = LossRecord::default();
        for (i, img) in batch.iter().enumerate() {
            let r = sample_loss(self, img, mode, i, w[i], grad.as_deref_mut());
            acc.reconstruction += w[i] * r.reconstruction;
            acc.codebook += w[i] * r.codebook;
            acc.commitment += w[i] * r.commitment;
            acc.total += w[i] * r.total;
        }
        Ok((acc, grad))
    }

    /// One Adam step on the weighted total loss with straight-through
    /// quantization. Returns the loss before the update.
    pub fn train_step(&mut self, batch: &[Image], weights: Option<&[f64]>) -> Result<LossRecord> {
        let (record, grad) = self.loss_gradient(batch, weights, Quantization::Nearest)?;
        let lr = self.config.learning_rate;
        self.optimizer.step(&mut self.params, &grad, lr);
        Ok(record)
    }

    /// Trains for `epochs` passes of `ceil(N / batch_size)` steps each. Every
    /// minibatch is drawn with replacement with probability proportional to
    /// `weights`. Optimizer state is reset first. Returns the mean step loss
    /// per epoch.
    pub fn fit_weighted(&mut self, images: &[Image], weights: &[f64], epochs: usize, seed: u64) -> Result<Vec<LossRecord>> {
        if images.is_empty() {
            return Err(invalid("cannot train on an empty dataset"));
        }
        normalize_weights(Some(weights), images.len())?;
        if epochs == 0 {
            return Ok(Vec::new());
        }
        let sampler = WeightedIndex::new(weights).map_err(|e| invalid(format!("bad sampling weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.optimizer = Adam::new(self.params.len());
        let bs = self.config.batch_size;
        let steps = images.len().div_ceil(bs);
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut mean = LossRecord::default();
            for _ in 0..steps {
                let batch: Vec<Image> = (0..bs).map(|_| images[sampler.sample(&mut rng)].clone()).collect();
                let r = self.train_step(&batch, None)?;
                mean.reconstruction += r.reconstruction / steps as f64;
                mean.codebook += r.codebook / steps as f64;
                mean.commitment += r.commitment / steps as f64;
                mean.total += r.total / steps as f64;
            }
            history.push(mean);
        }
        Ok(history)
    }

    /// Indices drawn for the minibatches of [`fit_weighted`](Self::fit_weighted)
    /// with the same arguments, without training.
    pub fn sampled_indices(&self, n: usize, weights: &[f64], epochs: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        normalize_weights(Some(weights), n)?;
        let sampler = WeightedIndex::new(weights).map_err(|e| invalid(format!("bad sampling weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bs = self.config.batch_size;
        let steps = n.div_ceil(bs) * epochs;
        Ok((0..steps)
            .map(|_| (0..bs).map(|_| sampler.sample(&mut rng)).collect())
            .collect())
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (libm::sqrt(vhat) + Self::EPS);
        }
    }
}
