//! Seeded synthetic score dataset with ground-truth salient regions.
//!
//! Every image is a smooth procedural background plus a score-dependent
//! "salient" element:
//!
//! * score ≤ 2: several small cluttered noise patches,
//! * score 3: nothing,
//! * scores 4–5: one faint soft-edged disc,
//! * score ≥ 6: one sharp disc whose contrast grows with the score.
//!
//! The truth mask marks the pixels of the salient element.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::write_manifest;
use super::Sample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub proportions: BTreeMap<i32, f64>,
    pub image_size: usize,
    pub seed: u64,
}

/// Default score mix: more than 80% of samples in scores 3–5, thin tails at 2 and 6–9.
pub fn default_proportions() -> BTreeMap<i32, f64> {
    BTreeMap::from([
        (2, 0.05),
        (3, 0.27),
        (4, 0.33),
        (5, 0.21),
        (6, 0.07),
        (7, 0.04),
        (8, 0.02),
        (9, 0.01),
    ])
}

/// Parses `score:fraction` pairs separated by commas, e.g. `3:0.5,4:0.5`.
pub fn parse_proportions(text: &str) -> Result<BTreeMap<i32, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (score, frac) = part
            .split_once(':')
            .ok_or_else(|| Error::Proportions(format!("expected score:fraction, got {part:?}")))?;
        let score: i32 = score
            .trim()
            .parse()
            .map_err(|_| Error::Proportions(format!("bad score {score:?}")))?;
        let frac: f64 = frac
            .trim()
            .parse()
            .map_err(|_| Error::Proportions(format!("bad fraction {frac:?}")))?;
        if out.insert(score, frac).is_some() {
            return Err(Error::Proportions(format!("score {score} listed twice")));
        }
    }
    validate_proportions(&out)?;
    Ok(out)
}

fn validate_proportions(proportions: &BTreeMap<i32, f64>) -> Result<()> {
    if proportions.is_empty() {
        return Err(Error::Proportions("no scores given".into()));
    }
    if let Some((s, f)) = proportions.iter().find(|(_, f)| !(f.is_finite() && **f >= 0.0)) {
        return Err(Error::Proportions(format!("fraction for score {s} is {f}")));
    }
    let sum: f64 = proportions.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Proportions(format!("fractions sum to {sum}, not 1")));
    }
    Ok(())
}

/// Hamilton apportionment of `n` over the proportions.
///
/// Leftover units go to the largest fractional remainders; equal remainders
/// favour the lower score.
pub fn largest_remainder_counts(n: usize, proportions: &BTreeMap<i32, f64>) -> Result<BTreeMap<i32, usize>> {
    validate_proportions(proportions)?;
    let quotas: Vec<(i32, f64)> = proportions.iter().map(|(&s, &f)| (s, n as f64 * f)).collect();
    let mut counts: BTreeMap<i32, usize> = quotas.iter().map(|&(s, q)| (s, q.floor() as usize)).collect();
    let assigned: usize = counts.values().sum();
    let mut by_remainder: Vec<(i32, f64)> = quotas.iter().map(|&(s, q)| (s, q - q.floor())).collect();
    by_remainder.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(s, _) in by_remainder.iter().take(n.saturating_sub(assigned)) {
        *counts.get_mut(&s).expect("score present") += 1;
    }
    Ok(counts)
}

fn sample_rng(seed: u64, id: usize) -> ChaCha8Rng {
    // splitmix-style mixing keeps per-sample streams unrelated
    let mut z = seed ^ (id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

struct Canvas {
    size: usize,
    rgb: Vec<f32>,
}

impl Canvas {
    fn background(size: usize, rng: &mut ChaCha8Rng) -> Canvas {
        let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.6));
        let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.3));
        let waves: Vec<(f32, f32, f32, f32)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.03..0.07),
                    rng.random_range(-2.5f32..2.5),
                    rng.random_range(-2.5f32..2.5),
                    rng.random_range(0.0..std::f32::consts::TAU),
                )
            })
            .collect();
        let noise = Normal::new(0.0f32, 0.02).expect("valid");
        let mut rgb = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
                let t: f32 = waves
                    .iter()
                    .map(|&(a, fx, fy, ph)| a * (std::f32::consts::TAU * (fx * u + fy * v) + ph).sin())
                    .sum();
                for c in 0..3 {
                    rgb.push(base[c] + t * tint[c] + noise.sample(rng));
                }
            }
        }
        Canvas { size, rgb }
    }

    fn blend(&mut self, y: usize, x: usize, color: [f32; 3], alpha: f32) {
        let at = (y * self.size + x) * 3;
        for c in 0..3 {
            self.rgb[at + c] = self.rgb[at + c] * (1.0 - alpha) + color[c] * alpha;
        }
    }

    fn shift(&mut self, y: usize, x: usize, delta: [f32; 3], alpha: f32) {
        let at = (y * self.size + x) * 3;
        for c in 0..3 {
            self.rgb[at + c] += delta[c] * alpha;
        }
    }

    fn into_tensor(self) -> Tensor {
        let size = self.size;
        let data = self.rgb.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Tensor::new(vec![size, size, 3], data).expect("canvas shape")
    }
}

/// Disc at a random position that fits inside the canvas.
fn random_disc(size: usize, rng: &mut ChaCha8Rng, r_min: f32, r_max: f32) -> (f32, f32, f32) {
    let r = rng.random_range(r_min..r_max);
    let lo = r + 1.0;
    let hi = (size as f32 - r - 1.0).max(lo + 0.01);
    (rng.random_range(lo..hi), rng.random_range(lo..hi), r)
}

fn contrast_direction(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    std::array::from_fn(|_| sign * rng.random_range(0.6..1.0))
}

/// Sharp (`softness` ≈ 0) or soft-edged disc that shifts colour by `contrast`.
fn paint_disc(canvas: &mut Canvas, mask: &mut BinaryMask, rng: &mut ChaCha8Rng, radius: (f32, f32), contrast: f32, softness: f32) {
    let size = canvas.size;
    let (cy, cx, r) = random_disc(size, rng, radius.0, radius.1);
    let dir = contrast_direction(rng);
    let delta = dir.map(|d| d * contrast);
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2)).sqrt();
            let alpha = if softness <= 0.0 {
                (d <= r) as u8 as f32
            } else {
                ((r - d) / softness + 0.5).clamp(0.0, 1.0)
            };
            if alpha > 0.0 {
                canvas.shift(y, x, delta, alpha);
            }
            if d <= r {
                mask.set(y, x, true);
            }
        }
    }
}

fn paint_clutter(canvas: &mut Canvas, mask: &mut BinaryMask, rng: &mut ChaCha8Rng, scale: f32) {
    let size = canvas.size;
    let patches = rng.random_range(4..=7);
    for _ in 0..patches {
        let (cy, cx, r) = random_disc(size, rng, 2.0 * scale, 3.5 * scale);
        for y in 0..size {
            for x in 0..size {
                let d = ((y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2)).sqrt();
                if d <= r {
                    let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
                    canvas.blend(y, x, color, 0.85);
                    mask.set(y, x, true);
                }
            }
        }
    }
}

fn render(score: i32, size: usize, rng: &mut ChaCha8Rng) -> (Tensor, BinaryMask) {
    let scale = size as f32 / 32.0;
    let mut canvas = Canvas::background(size, rng);
    let mut mask = BinaryMask::empty(size, size);
    match score {
        s if s <= 2 => paint_clutter(&mut canvas, &mut mask, rng, scale),
        3 => {}
        4 | 5 => {
            let contrast = if score == 4 { 0.07 } else { 0.13 } + rng.random_range(-0.03..0.03);
            paint_disc(&mut canvas, &mut mask, rng, (4.0 * scale, 7.0 * scale), contrast, 2.5 * scale);
        }
        s => {
            let contrast = 0.30 + 0.12 * (s - 6) as f32 + rng.random_range(-0.05..0.05);
            paint_disc(&mut canvas, &mut mask, rng, (5.0 * scale, 8.0 * scale), contrast, 0.0);
        }
    }
    (canvas.into_tensor(), mask)
}

/// Generates `spec.n` samples whose per-score counts follow
/// [`largest_remainder_counts`], in seeded shuffled order with ids `0..n`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Sample>> {
    if spec.image_size < 8 {
        return Err(Error::Config(format!("image size {} is below the minimum of 8", spec.image_size)));
    }
    let counts = largest_remainder_counts(spec.n, &spec.proportions)?;
    let mut labels: Vec<i32> = counts.iter().flat_map(|(&s, &c)| std::iter::repeat_n(s, c)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(id, score)| {
            let mut rng = sample_rng(spec.seed, id);
            let (image, mask) = render(score, spec.image_size, &mut rng);
            Sample {
                id,
                image,
                score,
                truth_mask: Some(mask),
            }
        })
        .collect())
}

pub(crate) fn tensor_to_rgb(image: &Tensor) -> RgbImage {
    let [h, w, _] = image.shape()[..] else {
        panic!("expected an H×W×3 image")
    };
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = (y as usize * w + x as usize) * 3;
        Rgb(std::array::from_fn(|c| (image.data()[at + c].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Writes `images/NNNNN.png`, `masks/NNNNN.png` and `manifest.csv` under `dir`.
pub fn export_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let name = format!("{:05}.png", s.id);
        let path = images.join(&name);
        tensor_to_rgb(&s.image)
            .save(&path)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
        if let Some(mask) = &s.truth_mask {
            let path = masks.join(&name);
            GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
                Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
            })
            .save(&path)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
        }
        rows.push((format!("images/{name}"), s.score));
    }
    write_manifest(&dir.join("manifest.csv"), &rows)
}
