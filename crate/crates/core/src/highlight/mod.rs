//! Highlight extraction from conv1 feature-map differences between two
//! checkpoints of one run.
//!
//! For one image, the conv1 channel whose maps correlate least between the
//! newer and older network is subtracted, and the difference is split in two
//! by 1-D 2-means. The high-magnitude cluster is the highlight region.

mod overlay;

pub use overlay::{overlay_image, render_overlay, save_difference_map, write_correlations, GUTTER};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::nn::Network;
use crate::tensor::Tensor;
use crate::trainer::TrainRun;

/// Below this spread a difference map counts as constant.
pub const CONSTANT_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HighlightConfig {
    /// Iteration gap: compare net_I with net_{I−k}.
    pub k: usize,
    /// Iteration I; the run's last iteration when `None`.
    pub latest: Option<usize>,
    /// Post-ReLU conv1 maps (true) or raw convolution outputs.
    pub post_activation: bool,
    /// Cluster signed differences instead of magnitudes.
    pub signed: bool,
}

impl Default for HighlightConfig {
    fn default() -> Self {
        HighlightConfig {
            k: 1,
            latest: None,
            post_activation: true,
            signed: false,
        }
    }
}

impl HighlightConfig {
    /// The (I, I−k) pair this config selects from a run of `available` iterations.
    pub fn pair(&self, available: usize) -> Result<(usize, usize)> {
        let latest = self.latest.unwrap_or(available);
        let insufficient = Error::InsufficientCheckpoints {
            available,
            latest,
            earlier: latest.saturating_sub(self.k),
        };
        if self.k == 0 || latest > available || latest <= self.k {
            return Err(insufficient);
        }
        Ok((latest, latest - self.k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    /// Conv1 channel J the difference was taken from.
    pub channel: usize,
    /// (I, I−k).
    pub iterations: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighlightMask {
    pub mask: BinaryMask,
    /// Centroid of the background cluster.
    pub low: f64,
    /// Centroid of the highlight cluster.
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Highlight {
    pub correlations: Vec<f64>,
    pub diff: DifferenceMap,
    pub mask: HighlightMask,
}

fn check_stacks(maps_i: &[Tensor], maps_ik: &[Tensor]) -> Result<()> {
    if maps_i.len() != maps_ik.len() || maps_i.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![maps_i.len()],
            actual: vec![maps_ik.len()],
        });
    }
    for (a, b) in maps_i.iter().zip(maps_ik) {
        if a.shape() != b.shape() || a.shape() != maps_i[0].shape() {
            return Err(Error::ShapeMismatch {
                expected: maps_i[0].shape().to_vec(),
                actual: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Pearson correlation of two equal-length series; 0 if either is constant.
pub fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Per-channel correlation between the two stacks.
pub fn channel_correlations(maps_i: &[Tensor], maps_ik: &[Tensor]) -> Result<Vec<f64>> {
    check_stacks(maps_i, maps_ik)?;
    Ok(maps_i.iter().zip(maps_ik).map(|(a, b)| pearson(a.data(), b.data())).collect())
}

fn is_constant(map: &Tensor) -> bool {
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    (hi as f64 - lo as f64) < CONSTANT_RANGE
}

/// Channel with the lowest correlation; the lowest index wins ties.
///
/// Channels constant in both stacks (dead ReLU units, typically) are skipped:
/// their policy correlation of 0 would otherwise beat every live channel while
/// their difference is flat. Falls back to channel 0 when every channel is skipped.
pub fn min_corr_index(maps_i: &[Tensor], maps_ik: &[Tensor]) -> Result<usize> {
    let corr = channel_correlations(maps_i, maps_ik)?;
    Ok(min_live_index(maps_i, maps_ik, &corr))
}

fn min_live_index(maps_i: &[Tensor], maps_ik: &[Tensor], corr: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (j, &c) in corr.iter().enumerate() {
        if is_constant(&maps_i[j]) && is_constant(&maps_ik[j]) {
            continue;
        }
        if best.is_none_or(|b| c < corr[b]) {
            best = Some(j);
        }
    }
    best.unwrap_or(0)
}

/// `maps_i[j] − maps_ik[j]`, tagged with the iterations it came from.
pub fn difference_map(maps_i: &[Tensor], maps_ik: &[Tensor], j: usize, iterations: (usize, usize)) -> Result<DifferenceMap> {
    check_stacks(maps_i, maps_ik)?;
    let (a, b) = match (maps_i.get(j), maps_ik.get(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::ShapeMismatch {
                expected: vec![maps_i.len()],
                actual: vec![j],
            })
        }
    };
    let [height, width] = a.shape()[..] else {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0],
            actual: a.shape().to_vec(),
        });
    };
    Ok(DifferenceMap {
        height,
        width,
        values: a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
        channel: j,
        iterations,
    })
}

fn sse_of_split(sorted: &[f64], split: usize) -> f64 {
    let sse = |part: &[f64]| {
        if part.is_empty() {
            return 0.0;
        }
        let m = part.iter().sum::<f64>() / part.len() as f64;
        part.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    sse(&sorted[..split]) + sse(&sorted[split..])
}

/// Best split index of ascending `sorted` (low = `..s`, high = `s..`) by
/// exhaustive scan over boundaries between distinct values.
fn best_split(sorted: &[f64]) -> Option<usize> {
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = sorted.iter().map(|v| v - mean).collect();
    let total: f64 = centered.iter().sum();
    let total_sq: f64 = centered.iter().map(|v| v * v).sum();
    let mut best: Option<(f64, usize)> = None;
    let mut prefix = 0.0;
    for s in 1..n {
        prefix += centered[s - 1];
        if sorted[s] == sorted[s - 1] {
            continue;
        }
        let suffix = total - prefix;
        let sse = total_sq - prefix * prefix / s as f64 - suffix * suffix / (n - s) as f64;
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, s));
        }
    }
    best.map(|(_, s)| s)
}

/// Lloyd iterations from centroids at the extremes, run to an assignment fixpoint.
/// Returns the threshold: values `>= t` belong to the high cluster.
fn lloyd_threshold(values: &[f64], lo: f64, hi: f64) -> f64 {
    let (mut c0, mut c1) = (lo, hi);
    let mut assignment: Vec<bool> = Vec::new();
    loop {
        let next: Vec<bool> = values.iter().map(|&v| (v - c1).abs() < (v - c0).abs()).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &high) in values.iter().zip(&assignment) {
            if high {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        if n0 > 0 {
            c0 = s0 / n0 as f64;
        }
        if n1 > 0 {
            c1 = s1 / n1 as f64;
        }
    }
    values
        .iter()
        .zip(&assignment)
        .filter(|(_, &h)| h)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min)
}

/// Two-cluster split of `values`. Lloyd's result is kept unless the exact
/// threshold scan finds a partition with strictly lower within-cluster SSE.
/// Returns `(is_high, low_centroid, high_centroid)`.
pub fn two_means_values(values: &[f64]) -> (Vec<bool>, f64, f64) {
    if values.is_empty() {
        return (Vec::new(), 0.0, 0.0);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < CONSTANT_RANGE {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        return (vec![false; values.len()], mean, mean);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let t_lloyd = lloyd_threshold(values, lo, hi);
    let mut split = sorted.partition_point(|&v| v < t_lloyd);
    if let Some(exact) = best_split(&sorted) {
        if sse_of_split(&sorted, exact) < sse_of_split(&sorted, split) {
            split = exact;
        }
    }
    let threshold = sorted[split];
    let is_high: Vec<bool> = values.iter().map(|&v| v >= threshold).collect();
    let mean = |part: &[f64]| part.iter().sum::<f64>() / part.len() as f64;
    (is_high, mean(&sorted[..split]), mean(&sorted[split..]))
}

/// 2-means on the difference map (magnitudes unless `signed`).
///
/// In signed mode the highlight is the cluster whose centroid is larger in
/// absolute value.
pub fn two_means(diff: &DifferenceMap, signed: bool) -> HighlightMask {
    let values: Vec<f64> = diff
        .values
        .iter()
        .map(|&v| if signed { v as f64 } else { (v as f64).abs() })
        .collect();
    let (mut is_high, mut low, mut high) = two_means_values(&values);
    if signed && low.abs() > high.abs() {
        is_high.iter_mut().for_each(|h| *h = !*h);
        std::mem::swap(&mut low, &mut high);
    }
    HighlightMask {
        mask: BinaryMask::new(diff.height, diff.width, is_high),
        low,
        high,
    }
}

/// Highlight of `image` between two explicit networks.
pub fn highlight_between(
    newer: &Network,
    older: &Network,
    image: &Tensor,
    iterations: (usize, usize),
    cfg: &HighlightConfig,
) -> Result<Highlight> {
    let maps_i = newer.conv1_feature_maps(image, cfg.post_activation)?;
    let maps_ik = older.conv1_feature_maps(image, cfg.post_activation)?;
    let correlations = channel_correlations(&maps_i, &maps_ik)?;
    let j = min_live_index(&maps_i, &maps_ik, &correlations);
    let diff = difference_map(&maps_i, &maps_ik, j, iterations)?;
    let mask = two_means(&diff, cfg.signed);
    Ok(Highlight {
        correlations,
        diff,
        mask,
    })
}

/// Highlight of `image` between net_I and net_{I−k} of `run`.
pub fn extract_highlight(run: &TrainRun, image: &Tensor, cfg: &HighlightConfig) -> Result<Highlight> {
    let (i, ik) = cfg.pair(run.iterations())?;
    let newer = run.network(i).expect("pair checked");
    let older = run.network(ik).expect("pair checked");
    highlight_between(newer, older, image, (i, ik), cfg)
}
