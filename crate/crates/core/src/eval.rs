//! Fréchet distance between Gaussian fits of image features.
//!
//! `d = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the trace of
//! the matrix square root taken from the eigenvalues of the symmetric matrix
//! `S_a^(1/2) S_b S_a^(1/2)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::linalg::symmetric_eigen;

/// Eigenvalues above `-EIGEN_TOLERANCE` are clamped to zero; anything more
/// negative is reported as a numerical-domain error.
pub const EIGEN_TOLERANCE: f64 = 1e-6;

/// Sample mean and unbiased covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    mean: Vec<f64>,
    /// Row-major `d x d`.
    covariance: Vec<f64>,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(invalid("covariance must be d x d"));
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[i * d + j] - covariance[j * d + i]).abs() > 1e-9 {
                    return Err(invalid("covariance must be symmetric"));
                }
            }
        }
        Ok(GaussianSummary { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }
}

pub fn gaussian_fit(features: &[Vec<f64>]) -> Result<GaussianSummary> {
    let n = features.len();
    if n < 2 {
        return Err(invalid(format!("need at least two samples, got {n}")));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(invalid("feature vectors have different lengths"));
    }
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for f in features {
        for k in 0..d {
            centered[k] = f[k] - mean[k];
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    let norm = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / norm;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianSummary { mean, covariance: cov })
}

fn checked_eigen(m: &[f64], d: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut vals, vecs) = symmetric_eigen(m, d);
    for v in &mut vals {
        if *v < -EIGEN_TOLERANCE {
            return Err(Error::NumericalDomain(format!(
                "{what} has eigenvalue {v}, below -{EIGEN_TOLERANCE}"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok((vals, vecs))
}

pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(invalid(format!("dimension mismatch: {d} vs {}", b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace_a: f64 = (0..d).map(|i| a.covariance[i * d + i]).sum();
    let trace_b: f64 = (0..d).map(|i| b.covariance[i * d + i]).sum();

    let (vals, vecs) = checked_eigen(&a.covariance, d, "first covariance")?;
    // S_a^(1/2) = V diag(sqrt(lambda)) V^T
    let mut root = vec![0.0; d * d];
    for k in 0..d {
        let s = libm::sqrt(vals[k]);
        if s == 0.0 {
            continue;
        }
        for i in 0..d {
            let vik = vecs[i * d + k] * s;
            if vik == 0.0 {
                continue;
            }
            for j in 0..d {
                root[i * d + j] += vik * vecs[j * d + k];
            }
        }
    }
    let tmp = matmul(&root, &b.covariance, d);
    let mut inner = matmul(&tmp, &root, d);
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = avg;
            inner[j * d + i] = avg;
        }
    }
    let (mu, _) = checked_eigen(&inner, d, "covariance product")?;
    let trace_sqrt: f64 = mu.iter().map(|&v| libm::sqrt(v)).sum();
    let dist = mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
    Ok(if dist < 0.0 { 0.0 } else { dist })
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// Deterministic image embeddings used in place of a learned feature network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// Raw pixel values.
    Flatten,
    /// Mean over non-overlapping 4x4 blocks, per channel.
    Downsample4,
}

impl FeatureMap {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Flatten => "flatten",
            FeatureMap::Downsample4 => "downsample4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "flatten" => Some(FeatureMap::Flatten),
            "downsample4" => Some(FeatureMap::Downsample4),
            _ => None,
        }
    }

    pub fn apply(&self, image: &Image) -> Vec<f64> {
        match self {
            FeatureMap::Flatten => image.data().to_vec(),
            FeatureMap::Downsample4 => {
                let (h, w, c) = image.shape();
                let (bh, bw) = (h.div_ceil(4), w.div_ceil(4));
                let mut out = vec![0.0; bh * bw * c];
                let mut counts = vec![0usize; bh * bw];
                for y in 0..h {
                    for x in 0..w {
                        let cell = (y / 4) * bw + x / 4;
                        counts[cell] += 1;
                        for ch in 0..c {
                            out[cell * c + ch] += image.get(y, x, ch);
                        }
                    }
                }
                for (cell, &n) in counts.iter().enumerate() {
                    for ch in 0..c {
                        out[cell * c + ch] /= n as f64;
                    }
                }
                out
            }
        }
    }
}

/// Fréchet distance between Gaussian fits of `map` applied to two image sets.
pub fn fid_like(a: &[Image], b: &[Image], map: FeatureMap) -> Result<f64> {
    let fa: Vec<Vec<f64>> = a.iter().map(|img| map.apply(img)).collect();
    let fb: Vec<Vec<f64>> = b.iter().map(|img| map.apply(img)).collect();
    frechet_distance(&gaussian_fit(&fa)?, &gaussian_fit(&fb)?)
}

/// Mean and sample standard deviation; the deviation is exactly zero when all
/// values are equal.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var))
}
