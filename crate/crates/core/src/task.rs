//! Synthetic smiling-face task.
//!
//! `16 x 16` grayscale cartoon faces: a circular outline, two eyes and a mouth
//! arc whose curvature grows affinely with a smile degree in `[0, 5]`. The
//! black-box objective is a matched-filter estimate of that degree computed
//! from the mouth region only.
//!
//! Geometry (pixel centers sit at half-integer coordinates, `x` to the right,
//! `y` down, face centered at `(7.5, 7.5)`):
//!
//! * mouth: `y(x) = 9 + a * (1 - ((x - 7.5) / 2.5)^2)` for `x` in `[5, 10]`,
//!   with sag `a = -1 + 0.6 * degree` (a frown at degree 0, a deep smile at 5);
//! * eyes: discs of radius 0.6 at `(7.5 -+ spacing / 2, 5)`;
//! * outline: circle of the given radius.
//!
//! Strokes have full intensity within 0.25 px of the curve and fade linearly
//! to zero at 1 px, so the mouth never leaves rows 7..=11, columns 4..=10,
//! and nothing else ever enters that box.

use alloc::format;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::lso::{Objective, WeightedDataset};

pub const IMAGE_SIZE: usize = 16;
pub const MAX_DEGREE: f64 = 5.0;

pub const EYE_SPACING_RANGE: (f64, f64) = (4.0, 6.0);
pub const FACE_RADIUS_RANGE: (f64, f64) = (6.5, 7.5);
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.7, 1.0);

/// Rows and columns (inclusive) that the mouth can occupy.
pub const MOUTH_ROWS: (usize, usize) = (7, 11);
pub const MOUTH_COLS: (usize, usize) = (4, 10);

const CENTER: f64 = 7.5;
const MOUTH_CORNER_Y: f64 = 9.0;
const MOUTH_HALF_WIDTH: f64 = 2.5;
const EYE_Y: f64 = 5.0;
const EYE_RADIUS: f64 = 0.6;
const CURVE_SAMPLES: usize = 201;
const TEMPLATE_STEP: f64 = 0.1;
const TEMPLATE_COUNT: usize = 51;

fn mouth_sag(degree: f64) -> f64 {
    -1.0 + 0.6 * degree
}

fn stroke(distance: f64) -> f64 {
    ((1.0 - distance) / 0.75).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceParams {
    pub degree: f64,
    pub eye_spacing: f64,
    pub face_radius: f64,
    pub brightness: f64,
}

impl FaceParams {
    /// The given degree with mid-range nuisance parameters and full brightness.
    pub fn with_degree(degree: f64) -> Self {
        FaceParams {
            degree,
            eye_spacing: 5.0,
            face_radius: 7.0,
            brightness: 1.0,
        }
    }

    /// Uniformly sampled nuisance parameters, degree uniform in `[0, max_degree]`.
    pub fn sample<R: Rng>(rng: &mut R, max_degree: f64) -> Self {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
        FaceParams {
            degree: uniform(rng, (0.0, max_degree)),
            eye_spacing: uniform(rng, EYE_SPACING_RANGE),
            face_radius: uniform(rng, FACE_RADIUS_RANGE),
            brightness: uniform(rng, BRIGHTNESS_RANGE),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        check("degree", self.degree, (0.0, MAX_DEGREE))?;
        check("eye_spacing", self.eye_spacing, EYE_SPACING_RANGE)?;
        check("face_radius", self.face_radius, FACE_RADIUS_RANGE)?;
        check("brightness", self.brightness, BRIGHTNESS_RANGE)
    }
}

fn mouth_distance(degree: f64, px: f64, py: f64) -> f64 {
    let sag = mouth_sag(degree);
    let mut best = f64::INFINITY;
    for i in 0..CURVE_SAMPLES {
        let u = -1.0 + 2.0 * i as f64 / (CURVE_SAMPLES - 1) as f64;
        let x = CENTER + MOUTH_HALF_WIDTH * u;
        let y = MOUTH_CORNER_Y + sag * (1.0 - u * u);
        let d = (px - x) * (px - x) + (py - y) * (py - y);
        if d < best {
            best = d;
        }
    }
    libm::sqrt(best)
}

fn mouth_intensity(degree: f64, row: usize, col: usize) -> f64 {
    stroke(mouth_distance(degree, col as f64 + 0.5, row as f64 + 0.5))
}

pub fn generate_face(p: &FaceParams) -> Result<Image> {
    p.validate()?;
    let mut img = Image::zeros(IMAGE_SIZE, IMAGE_SIZE, 1);
    let eyes = [CENTER - p.eye_spacing / 2.0, CENTER + p.eye_spacing / 2.0];
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let r = libm::hypot(px - CENTER, py - CENTER);
            let mut v = stroke((r - p.face_radius).abs());
            for ex in eyes {
                let d = libm::hypot(px - ex, py - EYE_Y) - EYE_RADIUS;
                v = v.max(stroke(d.max(0.0)));
            }
            if (MOUTH_ROWS.0..=MOUTH_ROWS.1).contains(&row) && (MOUTH_COLS.0..=MOUTH_COLS.1).contains(&col) {
                v = v.max(mouth_intensity(p.degree, row, col));
            }
            img.set(row, col, 0, p.brightness * v);
        }
    }
    Ok(img)
}

/// Matched-filter smile estimator over the mouth box.
///
/// The mouth box is compared by normalized correlation against 51 mouth
/// templates at degrees `0, 0.1, .., 5`; the best match is refined by
/// parabolic interpolation and clamped to `[0, 5]`.
#[derive(Debug, Clone)]
pub struct SmileScorer {
    templates: Vec<Vec<f64>>,
}

impl Default for SmileScorer {
    fn default() -> Self {
        Self::new()
    }
}

impl SmileScorer {
    pub fn new() -> Self {
        let templates = (0..TEMPLATE_COUNT)
            .map(|k| {
                let degree = k as f64 * TEMPLATE_STEP;
                let mut t: Vec<f64> = mouth_box()
                    .map(|(row, col)| mouth_intensity(degree, row, col))
                    .collect();
                let norm = libm::sqrt(t.iter().map(|v| v * v).sum::<f64>());
                for v in &mut t {
                    *v /= norm;
                }
                t
            })
            .collect();
        SmileScorer { templates }
    }

    pub fn score(&self, image: &Image) -> Result<f64> {
        if image.shape() != (IMAGE_SIZE, IMAGE_SIZE, 1) {
            return Err(invalid(format!(
                "scorer expects a {IMAGE_SIZE}x{IMAGE_SIZE}x1 image, got {:?}",
                image.shape()
            )));
        }
        let patch: Vec<f64> = mouth_box().map(|(row, col)| image.get(row, col, 0)).collect();
        let norm = libm::sqrt(patch.iter().map(|v| v * v).sum::<f64>());
        let corr: Vec<f64> = self
            .templates
            .iter()
            .map(|t| {
                if norm == 0.0 {
                    0.0
                } else {
                    t.iter().zip(&patch).map(|(a, b)| a * b).sum::<f64>() / norm
                }
            })
            .collect();
        let mut best = 0;
        for k in 1..corr.len() {
            if corr[k] > corr[best] {
                best = k;
            }
        }
        let mut offset = 0.0;
        if best > 0 && best + 1 < corr.len() {
            let (l, c, r) = (corr[best - 1], corr[best], corr[best + 1]);
            let denom = l - 2.0 * c + r;
            if denom < 0.0 {
                offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
            }
        }
        Ok(((best as f64 + offset) * TEMPLATE_STEP).clamp(0.0, MAX_DEGREE))
    }
}

impl Objective for SmileScorer {
    fn evaluate(&self, image: &Image) -> Result<f64> {
        self.score(image)
    }
}

fn mouth_box() -> impl Iterator<Item = (usize, usize)> {
    (MOUTH_ROWS.0..=MOUTH_ROWS.1).flat_map(|r| (MOUTH_COLS.0..=MOUTH_COLS.1).map(move |c| (r, c)))
}

/// `n` faces with degree uniform in `[0, max_degree]` and uniform nuisance
/// parameters. Stored scores are the scorer's estimates, not the true degrees.
pub fn make_dataset(n: usize, max_degree: f64, seed: u64) -> Result<WeightedDataset> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    if !(0.0..=MAX_DEGREE).contains(&max_degree) {
        return Err(invalid(format!("max_degree {max_degree} outside [0, {MAX_DEGREE}]")));
    }
    let scorer = SmileScorer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let img = generate_face(&FaceParams::sample(&mut rng, max_degree))?;
        scores.push(scorer.score(&img)?);
        images.push(img);
    }
    WeightedDataset::uniform(images, scores)
}

/// `n` faces with degree uniform in `[min_degree, max_degree]` and uniform
/// nuisance parameters.
pub fn sample_faces(n: usize, min_degree: f64, max_degree: f64, seed: u64) -> Result<Vec<Image>> {
    if !(0.0 <= min_degree && min_degree <= max_degree && max_degree <= MAX_DEGREE) {
        return Err(invalid(format!("degree range [{min_degree}, {max_degree}] outside [0, {MAX_DEGREE}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut p = FaceParams::sample(&mut rng, max_degree - min_degree);
            p.degree += min_degree;
            generate_face(&p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faces_are_deterministic_and_bounded() {
        let p = FaceParams {
            degree: 3.3,
            eye_spacing: 4.5,
            face_radius: 6.8,
            brightness: 0.8,
        };
        let a = generate_face(&p).unwrap();
        assert_eq!(a, generate_face(&p).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degree_only_changes_the_mouth_box() {
        let a = generate_face(&FaceParams::with_degree(0.0)).unwrap();
        let b = generate_face(&FaceParams::with_degree(5.0)).unwrap();
        let mut differs = 0;
        for row in 0..IMAGE_SIZE {
            for col in 0..IMAGE_SIZE {
                if a.get(row, col, 0) != b.get(row, col, 0) {
                    differs += 1;
                    assert!((MOUTH_ROWS.0..=MOUTH_ROWS.1).contains(&row), "row {row}");
                    assert!((MOUTH_COLS.0..=MOUTH_COLS.1).contains(&col), "col {col}");
                }
            }
        }
        assert!(differs > 5);
    }

    #[test]
    fn frown_at_zero_degree() {
        // the middle of the mouth sits above its corners
        assert!(mouth_sag(0.0) < 0.0);
        let img = generate_face(&FaceParams::with_degree(0.0)).unwrap();
        assert!(img.get(7, 7, 0) > img.get(11, 7, 0));
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let mut p = FaceParams::with_degree(5.5);
        assert!(generate_face(&p).is_err());
        p.degree = 1.0;
        p.brightness = 1.2;
        assert!(generate_face(&p).is_err());
    }

    #[test]
    fn scorer_is_calibrated_and_monotone() {
        let scorer = SmileScorer::new();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=10 {
            let theta = i as f64 * 0.5;
            let s = scorer.score(&generate_face(&FaceParams::with_degree(theta)).unwrap()).unwrap();
            assert!((s - theta).abs() <= 0.25, "theta {theta}: {s}");
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn scorer_handles_degenerate_inputs() {
        let scorer = SmileScorer::new();
        let s = scorer.score(&Image::zeros(16, 16, 1)).unwrap();
        assert!((0.0..=5.0).contains(&s));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Image::new(16, 16, 1, (0..256).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let a = scorer.score(&noise).unwrap();
        assert_eq!(a, scorer.score(&noise).unwrap());
        assert!((0.0..=5.0).contains(&a));
        assert!(scorer.score(&Image::zeros(8, 8, 1)).is_err());
    }

    #[test]
    fn truncated_dataset_stays_below_the_cut() {
        let data = make_dataset(300, 2.0, 1).unwrap();
        assert_eq!(data.len(), 300);
        assert!(data.scores().iter().all(|&s| s <= 2.25));
        assert_eq!(data, make_dataset(300, 2.0, 1).unwrap());
        let one = make_dataset(1, 2.0, 3).unwrap();
        assert_eq!(one.weights(), &[1.0]);
        assert!(make_dataset(0, 2.0, 3).is_err());
    }
}
