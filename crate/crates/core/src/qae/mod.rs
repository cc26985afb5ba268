//! A small vector-quantized autoencoder.
//!
//! Architecture for an `H x W x C` image (`H`, `W` divisible by 4):
//!
//! ```text
//! encoder  2x2/stride-2 filter C -> hidden, leaky ReLU      (H/2, W/2, hidden)
//!          2x2/stride-2 filter hidden -> D, linear          (H/4, W/4, D)
//! quantize nearest of K codebook vectors per cell           (H/4, W/4) indices
//! decoder  2x2/stride-2 transposed filter D -> hidden, leaky ReLU
//!          2x2/stride-2 transposed filter hidden -> C, linear
//! ```
//!
//! All parameters live in one flat vector, in this order (each weight matrix
//! row-major, filter taps indexed by `(dy * 2 + dx) * channels + channel`):
//!
//! 1. `enc1.weight [hidden][4C]`, `enc1.bias [hidden]`
//! 2. `enc2.weight [D][4 hidden]`, `enc2.bias [D]`
//! 3. `dec1.weight [4 hidden][D]`, `dec1.bias [hidden]`
//! 4. `dec2.weight [4C][hidden]`, `dec2.bias [C]`
//! 5. `codebook [K][D]`

mod train;

pub use train::{LossRecord, Quantization};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::Image;

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct QaeConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Codebook vector dimension `D`.
    pub latent_dim: usize,
    /// Number of codebook vectors `K`.
    pub codebook_size: usize,
    /// Commitment weight.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for QaeConfig {
    fn default() -> Self {
        QaeConfig {
            image_height: 16,
            image_width: 16,
            channels: 1,
            hidden: 32,
            latent_dim: 8,
            codebook_size: 16,
            beta: 0.25,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl QaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 || !self.image_height.is_multiple_of(4) || !self.image_width.is_multiple_of(4) {
            return Err(invalid("image height and width must be positive multiples of 4"));
        }
        if self.channels == 0 || self.hidden == 0 || self.latent_dim == 0 || self.batch_size == 0 {
            return Err(invalid("channels, hidden, latent_dim and batch_size must be positive"));
        }
        if self.codebook_size < 2 {
            return Err(invalid("codebook needs at least two vectors"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta must be a finite non-negative number"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be a finite non-negative number"));
        }
        Ok(())
    }

    pub fn latent_height(&self) -> usize {
        self.image_height / 4
    }

    pub fn latent_width(&self) -> usize {
        self.image_width / 4
    }

    pub fn num_latents(&self) -> usize {
        self.latent_height() * self.latent_width()
    }

    pub fn num_params(&self) -> usize {
        Layout::new(self).total
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Layout {
    pub enc1_w: usize,
    pub enc1_b: usize,
    pub enc2_w: usize,
    pub enc2_b: usize,
    pub dec1_w: usize,
    pub dec1_b: usize,
    pub dec2_w: usize,
    pub dec2_b: usize,
    pub codebook: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &QaeConfig) -> Self {
        let (c, h, d, k) = (cfg.channels, cfg.hidden, cfg.latent_dim, cfg.codebook_size);
        let enc1_w = 0;
        let enc1_b = enc1_w + h * 4 * c;
        let enc2_w = enc1_b + h;
        let enc2_b = enc2_w + d * 4 * h;
        let dec1_w = enc2_b + d;
        let dec1_b = dec1_w + 4 * h * d;
        let dec2_w = dec1_b + h;
        let dec2_b = dec2_w + 4 * c * h;
        let codebook = dec2_b + c;
        let total = codebook + k * d;
        Layout {
            enc1_w,
            enc1_b,
            enc2_w,
            enc2_b,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            codebook,
            total,
        }
    }
}

/// `h x w x D` grid of continuous vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousGrid {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ContinuousGrid {
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }
}

/// `h x w` grid of codebook indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    codes: Vec<usize>,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, codes: Vec<usize>) -> Result<Self> {
        if codes.len() != height * width {
            return Err(invalid(format!(
                "{} codes do not fill a {height}x{width} grid",
                codes.len()
            )));
        }
        Ok(LatentGrid { height, width, codes })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn into_codes(self) -> Vec<usize> {
        self.codes
    }
}

/// `K` vectors of dimension `D`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if size < 2 || dim == 0 || vectors.len() != size * dim {
            return Err(invalid("codebook needs K >= 2 vectors of positive dimension"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(invalid("codebook vectors must be finite"));
        }
        Ok(Codebook { size, dim, vectors })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }
}

/// Index of the nearest row of `vectors` (Euclidean), lowest index on ties.
pub(crate) fn nearest(vectors: &[f64], dim: usize, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in vectors.chunks_exact(dim).enumerate() {
        let d: f64 = e.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Replaces every cell by its nearest codebook vector.
pub fn quantize(codebook: &Codebook, grid: &ContinuousGrid) -> Result<(LatentGrid, ContinuousGrid)> {
    if grid.dim != codebook.dim {
        return Err(invalid(format!(
            "grid depth {} does not match codebook dimension {}",
            grid.dim, codebook.dim
        )));
    }
    let mut codes = Vec::with_capacity(grid.num_cells());
    let mut data = Vec::with_capacity(grid.data.len());
    for i in 0..grid.num_cells() {
        let k = nearest(&codebook.vectors, codebook.dim, grid.cell(i));
        codes.push(k);
        data.extend_from_slice(codebook.vector(k));
    }
    Ok((
        LatentGrid {
            height: grid.height,
            width: grid.width,
            codes,
        },
        ContinuousGrid {
            height: grid.height,
            width: grid.width,
            dim: grid.dim,
            data,
        },
    ))
}

#[inline]
pub(crate) fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaeModel {
    config: QaeConfig,
    layout: Layout,
    params: Vec<f64>,
    optimizer: train::Adam,
}

impl QaeModel {
    /// Randomly initialized model. Filter weights are uniform in
    /// `+-1/sqrt(fan_in)`, biases zero, codebook uniform in `+-1/K`.
    pub fn new(config: QaeConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total];
        let (c, h, d, k) = (config.channels, config.hidden, config.latent_dim, config.codebook_size);
        let mut fill = |from: usize, to: usize, bound: f64| {
            for p in &mut params[from..to] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        let inv_sqrt = |n: usize| 1.0 / libm::sqrt(n as f64);
        fill(layout.enc1_w, layout.enc1_b, inv_sqrt(4 * c));
        fill(layout.enc2_w, layout.enc2_b, inv_sqrt(4 * h));
        fill(layout.dec1_w, layout.dec1_b, inv_sqrt(d));
        fill(layout.dec2_w, layout.dec2_b, inv_sqrt(h));
        fill(layout.codebook, layout.total, 1.0 / k as f64);
        Ok(QaeModel {
            optimizer: train::Adam::new(layout.total),
            config,
            layout,
            params,
        })
    }

    /// Model with explicit parameters in the documented flat order.
    pub fn from_params(config: QaeConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(QaeModel {
            optimizer: train::Adam::new(layout.total),
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &QaeConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        *self = Self::from_params(self.config.clone(), params)?;
        Ok(())
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.config.latent_height(), self.config.latent_width())
    }

    /// Number of categorical latent variables `h * w`.
    pub fn num_latents(&self) -> usize {
        self.config.num_latents()
    }

    pub fn codebook(&self) -> Codebook {
        Codebook {
            size: self.config.codebook_size,
            dim: self.config.latent_dim,
            vectors: self.codebook_slice().to_vec(),
        }
    }

    pub(crate) fn codebook_slice(&self) -> &[f64] {
        &self.params[self.layout.codebook..self.layout.total]
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let expect = (self.config.image_height, self.config.image_width, self.config.channels);
        if image.shape() != expect {
            return Err(invalid(format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                expect
            )));
        }
        Ok(())
    }

    pub fn encode(&self, image: &Image) -> Result<ContinuousGrid> {
        self.check_image(image)?;
        let enc = train::encoder_forward(self, image);
        let (h, w) = self.latent_shape();
        Ok(ContinuousGrid {
            height: h,
            width: w,
            dim: self.config.latent_dim,
            data: enc.latent,
        })
    }

    /// `quantize(encode(image))` indices.
    pub fn encode_latent(&self, image: &Image) -> Result<LatentGrid> {
        Ok(quantize(&self.codebook(), &self.encode(image)?)?.0)
    }

    /// Decodes a latent grid into an image clamped to `[0, 1]`.
    pub fn decode(&self, latent: &LatentGrid) -> Result<Image> {
        let (h, w) = self.latent_shape();
        if latent.height != h || latent.width != w {
            return Err(invalid(format!(
                "latent grid is {}x{}, model expects {h}x{w}",
                latent.height, latent.width
            )));
        }
        let k = self.config.codebook_size;
        let d = self.config.latent_dim;
        let mut zq = Vec::with_capacity(h * w * d);
        for &code in &latent.codes {
            if code >= k {
                return Err(invalid(format!("code {code} outside [0, {k})")));
            }
            zq.extend_from_slice(&self.codebook_slice()[code * d..(code + 1) * d]);
        }
        let mut img = train::decoder_forward(self, &zq).output;
        img.clamp_unit();
        Ok(img)
    }

    /// Decodes a flattened latent code vector (as used by the surrogate).
    pub fn decode_codes(&self, codes: &[usize]) -> Result<Image> {
        let (h, w) = self.latent_shape();
        self.decode(&LatentGrid::new(h, w, codes.to_vec())?)
    }

    pub fn reconstruct(&self, image: &Image) -> Result<Image> {
        self.decode(&self.encode_latent(image)?)
    }
}

#[cfg(test)]
mod tests;
