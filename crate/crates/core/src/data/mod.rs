//! Samples, manifest ingestion, the synthetic generator, and masked dataset views.

mod manifest;
mod synth;
mod view;

use std::collections::BTreeMap;

pub use manifest::{load_image, load_manifest, write_manifest};
pub(crate) use synth::tensor_to_rgb;
pub use synth::{default_proportions, export_dataset, largest_remainder_counts, parse_proportions, synth_generate, SynthSpec};
pub use view::{apply_mask, DatasetView};

use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// A labeled `H×W×3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: Tensor,
    pub score: i32,
    /// Ground-truth salient region, present for synthetic samples only.
    pub truth_mask: Option<BinaryMask>,
}

/// Per-score counts and the three most populated scores.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScoreDistribution {
    pub counts: BTreeMap<i32, usize>,
    /// Up to three scores ordered by descending count; ties go to the lower score.
    pub ranked_majority: Vec<i32>,
}

impl ScoreDistribution {
    pub fn from_scores(scores: impl IntoIterator<Item = i32>) -> Self {
        let mut counts = BTreeMap::new();
        for s in scores {
            *counts.entry(s).or_insert(0usize) += 1;
        }
        let mut ranked: Vec<(i32, usize)> = counts.iter().map(|(&s, &c)| (s, c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ScoreDistribution {
            ranked_majority: ranked.iter().take(3).map(|&(s, _)| s).collect(),
            counts,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Position (0, 1, 2) of `score` among the majority classes.
    pub fn majority_rank(&self, score: i32) -> Option<usize> {
        self.ranked_majority.iter().position(|&s| s == score)
    }
}

/// Counts over the active samples of `view`.
pub fn class_counts(view: &DatasetView) -> ScoreDistribution {
    ScoreDistribution::from_scores(view.active_samples().map(|s| s.score))
}
