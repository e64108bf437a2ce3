//! Repetitive training with majority-class sample drop-out.
//!
//! Iteration 1 trains on the whole dataset. Each later iteration scores every
//! original sample under the previous network, drops low-likelihood samples of
//! the three most populated classes, and warm-starts the next network on what
//! remains. Selection always starts from the full dataset, so a sample dropped
//! earlier comes back as soon as the newer network scores it above threshold.

mod config;
mod run_dir;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{LikelihoodMode, TrainConfig, TRAIN_KEYS};
pub use run_dir::{load_run, load_run_config, RunDir};

use crate::data::{DatasetView, Sample, ScoreDistribution};
use crate::error::{Error, Result};
use crate::nn::{argmax, default_architecture, sigmoid, softmax, Checkpoint, Network, Sgd};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutThresholds {
    /// Applied to samples of the most populated class.
    pub k1: f64,
    /// Applied to samples of the second and third most populated classes.
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRow {
    pub id: usize,
    pub likelihoods: Vec<f64>,
    /// Index of the highest softmax probability.
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    pub class_scores: Vec<i32>,
    pub rows: Vec<LikelihoodRow>,
}

impl LikelihoodTable {
    fn class_index(&self, score: i32) -> Option<usize> {
        self.class_scores.iter().position(|&s| s == score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    LossBelowThreshold,
    MaxIterations,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::LossBelowThreshold => "loss_below_threshold",
            StopReason::MaxIterations => "max_iterations",
        })
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "loss_below_threshold" => Ok(StopReason::LossBelowThreshold),
            "max_iterations" => Ok(StopReason::MaxIterations),
            other => Err(Error::Config(format!("unknown stop reason {other:?}"))),
        }
    }
}

/// Full history of a repetitive training run. Index `i` holds iteration `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub checkpoints: Vec<Network>,
    /// Quadratic loss on the original dataset after each iteration.
    pub losses: Vec<f64>,
    pub dropped_sets: Vec<BTreeSet<usize>>,
    /// `None` for iteration 1, which trains on everything.
    pub thresholds_used: Vec<Option<DropoutThresholds>>,
    pub remaining_counts: Vec<usize>,
    pub stop_reason: StopReason,
}

impl TrainRun {
    pub fn iterations(&self) -> usize {
        self.checkpoints.len()
    }

    /// Network of 1-based iteration `i`.
    pub fn network(&self, iteration: usize) -> Option<&Network> {
        iteration.checked_sub(1).and_then(|i| self.checkpoints.get(i))
    }

    pub fn last(&self) -> &Network {
        self.checkpoints.last().expect("a run has at least one checkpoint")
    }
}

/// One finished iteration, handed to persistence as soon as it exists.
#[derive(Debug)]
pub struct IterationRecord<'a> {
    pub iteration: usize,
    pub network: &'a Network,
    pub loss: f64,
    pub thresholds: Option<DropoutThresholds>,
    pub dropped: &'a BTreeSet<usize>,
    pub remaining: usize,
}

fn class_indices(samples: &[Sample], class_scores: &[i32]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            class_scores.iter().position(|&c| c == s.score).ok_or_else(|| {
                Error::Config(format!("sample {} has score {} outside {class_scores:?}", s.id, s.score))
            })
        })
        .collect()
}

fn to_chw(samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
    samples
        .par_iter()
        .map(|s| s.image.hwc_to_chw().map(Tensor::into_data))
        .collect()
}

fn epoch_seed(seed: u64, iteration: usize, epoch: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ ((iteration as u64) << 32) ^ epoch as u64
}

/// Mini-batch SGD over `active` positions; the shuffle is seeded per (iteration, epoch).
fn train_epochs(
    net: &mut Network,
    inputs: &[Vec<f32>],
    targets: &[usize],
    active: &[usize],
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<()> {
    let lr = if iteration == 1 { cfg.lr } else { cfg.lr * cfg.retrain_lr_scale };
    let mut opt = Sgd::new(lr, cfg.momentum)?.with_weight_decay(cfg.weight_decay)?;
    let total_steps = cfg.epochs_per_iteration * active.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.epochs_per_iteration {
        let mut order = active.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, iteration, epoch)));
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ts: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let grads = net.batch_gradients(&xs, &ts)?;
            if !grads.is_finite() {
                return Err(Error::Config(format!(
                    "iteration {iteration}, epoch {epoch}: non-finite gradients (learning rate too high?)"
                )));
            }
            if cfg.cosine_decay {
                let t = step as f64 / total_steps as f64;
                opt.lr = (lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32;
            }
            opt.step(net, &grads)?;
            step += 1;
        }
    }
    Ok(())
}

/// Builds the default architecture for `input_size`-pixel RGB images.
pub fn build_default_network(input_size: usize, cfg: &TrainConfig) -> Result<Network> {
    let mut net = Network::build(
        [3, input_size, input_size],
        default_architecture(3, input_size, cfg.class_scores.len()),
        cfg.class_scores.clone(),
        cfg.seed,
    )?;
    if cfg.freeze_convolutions {
        net.freeze_convolutions();
    }
    Ok(net)
}

/// Trains `net` on the active samples of `data`, producing iteration 1.
pub fn train_initial(net: &Network, data: &DatasetView, cfg: &TrainConfig) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base = data.base();
    let inputs = to_chw(base)?;
    let targets = class_indices(base, net.class_scores())?;
    let mut trained = net.clone();
    train_epochs(&mut trained, &inputs, &targets, &data.active_indices(), cfg, 1)?;
    Ok(Checkpoint {
        iteration: 1,
        network: trained,
    })
}

fn likelihood_row(net: &Network, id: usize, input: &[f32], mode: LikelihoodMode) -> LikelihoodRow {
    let logits = net.logits_chw(input);
    let probs = softmax(&logits);
    let likelihoods = match mode {
        LikelihoodMode::Sigmoid => logits.iter().map(|&z| sigmoid(z as f64)).collect(),
        LikelihoodMode::Softmax => probs.iter().map(|&p| p as f64).collect(),
    };
    LikelihoodRow {
        id,
        likelihoods,
        predicted: argmax(&probs),
    }
}

/// One row per sample of `base`, in base order, regardless of any mask.
pub fn compute_likelihoods(net: &Network, base: &[Sample], mode: LikelihoodMode) -> Result<LikelihoodTable> {
    let inputs = to_chw(base)?;
    Ok(likelihoods_from_inputs(net, base, &inputs, mode))
}

fn likelihoods_from_inputs(net: &Network, base: &[Sample], inputs: &[Vec<f32>], mode: LikelihoodMode) -> LikelihoodTable {
    let rows = base
        .par_iter()
        .zip(inputs.par_iter())
        .map(|(s, x)| likelihood_row(net, s.id, x, mode))
        .collect();
    LikelihoodTable {
        class_scores: net.class_scores().to_vec(),
        rows,
    }
}

/// Whether one sample is dropped under the given thresholds.
fn is_dropped(
    row: &LikelihoodRow,
    label: i32,
    majority: &[Option<usize>],
    dist: &ScoreDistribution,
    table: &LikelihoodTable,
    th: DropoutThresholds,
    literal: bool,
) -> bool {
    match dist.majority_rank(label) {
        Some(0) => majority[0].is_some_and(|c| row.likelihoods[c] < th.k1),
        Some(_) => {
            let tested = if literal { majority[0] } else { table.class_index(label) };
            tested.is_some_and(|c| row.likelihoods[c] < th.k2)
        }
        None => false,
    }
}

/// Ids dropped under thresholds `th`.
///
/// A sample of the most populated class is dropped when its likelihood for
/// that class is below `k1`. A sample of the second or third class is dropped
/// when the likelihood tested against `k2` falls below it: the first majority
/// class's likelihood in literal mode, its own class's otherwise. Other
/// classes are never dropped.
pub fn select_dropouts(
    table: &LikelihoodTable,
    labels: &[i32],
    dist: &ScoreDistribution,
    th: DropoutThresholds,
    literal: bool,
) -> BTreeSet<usize> {
    let majority: Vec<Option<usize>> = dist.ranked_majority.iter().map(|&s| table.class_index(s)).collect();
    table
        .rows
        .iter()
        .zip(labels)
        .filter(|(row, &label)| is_dropped(row, label, &majority, dist, table, th, literal))
        .map(|(row, _)| row.id)
        .collect()
}

/// Exhaustive grid search for the thresholds whose remaining count is
/// closest to `target_remaining_fraction × size`; ties prefer smaller K1, then K2.
pub fn tune_thresholds(
    table: &LikelihoodTable,
    labels: &[i32],
    dist: &ScoreDistribution,
    cfg: &TrainConfig,
) -> DropoutThresholds {
    let grid = cfg.threshold_grid();
    let size = table.rows.len();
    let target = cfg.target_remaining_fraction * size as f64;
    let mut best: Option<(f64, DropoutThresholds)> = None;
    for &k1 in &grid {
        for &k2 in &grid {
            let th = DropoutThresholds { k1, k2 };
            let dropped = select_dropouts(table, labels, dist, th, cfg.literal_condition_mode).len();
            let gap = ((size - dropped) as f64 - target).abs();
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, th));
            }
        }
    }
    best.expect("grid is non-empty").1
}

/// Predicted score for one `H×W×3` image.
pub fn classify(net: &Network, image: &Tensor) -> Result<i32> {
    net.classify(image)
}

fn predicted_scores(net: &Network, inputs: &[Vec<f32>]) -> Vec<i32> {
    inputs
        .par_iter()
        .map(|x| net.class_scores()[argmax(&softmax(&net.logits_chw(x)))])
        .collect()
}

fn mean_squared_score_error(labels: impl Iterator<Item = i32>, predicted: &[i32]) -> f64 {
    let sum: f64 = labels
        .zip(predicted)
        .map(|(l, &p)| ((l - p) as f64).powi(2))
        .sum();
    sum / predicted.len() as f64
}

/// Mean squared difference between label and predicted score over `base`.
pub fn quadratic_loss(net: &Network, base: &[Sample]) -> Result<f64> {
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = to_chw(base)?;
    Ok(mean_squared_score_error(base.iter().map(|s| s.score), &predicted_scores(net, &inputs)))
}

/// Runs the full procedure in memory.
pub fn repetitive_train(base: &[Sample], cfg: &TrainConfig) -> Result<TrainRun> {
    repetitive_train_with(base, cfg, |_| Ok(()))
}

/// Runs the full procedure, calling `on_iteration` after each network is trained.
pub fn repetitive_train_with(
    base: &[Sample],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationRecord) -> Result<()>,
) -> Result<TrainRun> {
    cfg.validate()?;
    let first = base.first().ok_or(Error::EmptyDataset)?;
    let [h, w, _] = first.image.shape()[..] else {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 3],
            actual: first.image.shape().to_vec(),
        });
    };
    if h != w {
        return Err(Error::Config(format!("images must be square, got {h}×{w}")));
    }
    let inputs = to_chw(base)?;
    let targets = class_indices(base, &cfg.class_scores)?;
    let labels: Vec<i32> = base.iter().map(|s| s.score).collect();
    let dist = ScoreDistribution::from_scores(labels.iter().copied());
    let all: Vec<usize> = (0..base.len()).collect();

    let mut net = build_default_network(h, cfg)?;
    train_epochs(&mut net, &inputs, &targets, &all, cfg, 1)?;
    let loss = mean_squared_score_error(labels.iter().copied(), &predicted_scores(&net, &inputs));
    let none = BTreeSet::new();
    on_iteration(&IterationRecord {
        iteration: 1,
        network: &net,
        loss,
        thresholds: None,
        dropped: &none,
        remaining: base.len(),
    })?;

    let mut run = TrainRun {
        checkpoints: vec![net],
        losses: vec![loss],
        dropped_sets: vec![none],
        thresholds_used: vec![None],
        remaining_counts: vec![base.len()],
        stop_reason: StopReason::MaxIterations,
    };
    if loss < cfg.loss_threshold {
        run.stop_reason = StopReason::LossBelowThreshold;
        return Ok(run);
    }

    for iteration in 2..=cfg.max_iterations {
        let previous = run.last();
        let table = likelihoods_from_inputs(previous, base, &inputs, cfg.likelihood_mode);
        let th = tune_thresholds(&table, &labels, &dist, cfg);
        let dropped = select_dropouts(&table, &labels, &dist, th, cfg.literal_condition_mode);
        let active: Vec<usize> = all.iter().copied().filter(|&i| !dropped.contains(&base[i].id)).collect();
        if active.is_empty() {
            return Err(Error::EmptyView { iteration });
        }

        let mut net = previous.clone();
        train_epochs(&mut net, &inputs, &targets, &active, cfg, iteration)?;
        let loss = mean_squared_score_error(labels.iter().copied(), &predicted_scores(&net, &inputs));
        on_iteration(&IterationRecord {
            iteration,
            network: &net,
            loss,
            thresholds: Some(th),
            dropped: &dropped,
            remaining: active.len(),
        })?;

        run.checkpoints.push(net);
        run.losses.push(loss);
        run.dropped_sets.push(dropped);
        run.thresholds_used.push(Some(th));
        run.remaining_counts.push(active.len());
        if loss < cfg.loss_threshold {
            run.stop_reason = StopReason::LossBelowThreshold;
            break;
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<f64>>, scores: Vec<i32>) -> LikelihoodTable {
        LikelihoodTable {
            class_scores: scores,
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(id, likelihoods)| LikelihoodRow {
                    id,
                    likelihoods,
                    predicted: 0,
                })
                .collect(),
        }
    }

    fn dist_345() -> ScoreDistribution {
        // 4 most common, then 3, then 5
        ScoreDistribution::from_scores([4, 4, 4, 4, 3, 3, 3, 5, 5, 2])
    }

    const TH: DropoutThresholds = DropoutThresholds { k1: 0.9, k2: 0.9 };

    #[test]
    fn first_majority_below_k1_is_dropped() {
        // classes [3, 4, 5]; sample labelled 4 with fc_4 = 0.80
        let t = table(vec![vec![0.1, 0.80, 0.1]], vec![3, 4, 5]);
        assert_eq!(select_dropouts(&t, &[4], &dist_345(), TH, true), BTreeSet::from([0]));
    }

    #[test]
    fn second_majority_tests_first_majority_likelihood_in_literal_mode() {
        // labelled 3 (second majority) with fc_4 = 0.92 ≥ K2 → kept, even though fc_3 is low
        let t = table(vec![vec![0.2, 0.92, 0.1]], vec![3, 4, 5]);
        assert!(select_dropouts(&t, &[3], &dist_345(), TH, true).is_empty());
        // own-class mode tests fc_3 = 0.2 < K2 → dropped
        assert_eq!(select_dropouts(&t, &[3], &dist_345(), TH, false), BTreeSet::from([0]));
    }

    #[test]
    fn minority_classes_are_never_dropped() {
        let t = table(vec![vec![0.01, 0.01, 0.01, 0.01]], vec![2, 3, 4, 5]);
        assert!(select_dropouts(&t, &[2], &dist_345(), TH, true).is_empty());
        assert!(select_dropouts(&t, &[2], &dist_345(), TH, false).is_empty());
    }

    #[test]
    fn tuning_with_nothing_to_drop_returns_lowest_corner() {
        let t = table(vec![vec![0.99; 3]; 6], vec![3, 4, 5]);
        let labels = [4, 4, 3, 5, 3, 4];
        let th = tune_thresholds(&t, &labels, &dist_345(), &TrainConfig::default());
        assert_eq!(th, DropoutThresholds { k1: 0.85, k2: 0.85 });
    }

    #[test]
    fn tuning_with_everything_dropped_returns_lowest_corner() {
        let t = table(vec![vec![0.5; 3]; 6], vec![3, 4, 5]);
        let labels = [4, 4, 3, 5, 3, 4];
        let th = tune_thresholds(&t, &labels, &dist_345(), &TrainConfig::default());
        assert_eq!(th, DropoutThresholds { k1: 0.85, k2: 0.85 });
    }

    #[test]
    fn tuning_picks_the_threshold_hitting_the_target() {
        // six samples of class 4 with graded likelihood; target 4 remaining → drop two
        let rows: Vec<Vec<f64>> = [0.86, 0.875, 0.89, 0.91, 0.93, 0.96]
            .iter()
            .map(|&v| vec![0.1, v, 0.1])
            .collect();
        let t = table(rows, vec![3, 4, 5]);
        let cfg = TrainConfig::default();
        let th = tune_thresholds(&t, &[4; 6], &ScoreDistribution::from_scores([4; 6]), &cfg);
        // K1 = 0.88 drops {0.86, 0.875}; 0.89 would also drop 0.89 (strict <)
        assert_eq!(th.k1, 0.88);
        assert_eq!(th.k2, 0.85);
    }

    #[test]
    fn squared_score_error_arithmetic() {
        assert_eq!(mean_squared_score_error([3, 5].into_iter(), &[4, 4]), 1.0);
        assert_eq!(mean_squared_score_error([3, 5].into_iter(), &[3, 5]), 0.0);
    }

    fn tiny_base(n: usize) -> Vec<Sample> {
        crate::data::synth_generate(&crate::data::SynthSpec {
            n,
            proportions: crate::data::default_proportions(),
            image_size: 8,
            seed: 4,
        })
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs_per_iteration: 2,
            loss_threshold: 1e-9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leave_network_unchanged() {
        let base = tiny_base(20);
        let cfg = TrainConfig {
            epochs_per_iteration: 0,
            ..quick()
        };
        let net = build_default_network(8, &cfg).unwrap();
        let out = train_initial(&net, &DatasetView::full(&base), &cfg).unwrap();
        assert_eq!(out.iteration, 1);
        assert_eq!(out.network, net);
    }

    #[test]
    fn separable_pair_is_learned() {
        let mut base = tiny_base(2);
        let (dark, light) = (Tensor::zeros(&[8, 8, 3]), Tensor::new(vec![8, 8, 3], vec![1.0; 192]).unwrap());
        for (i, s) in base.iter_mut().enumerate() {
            s.image = if i == 0 { dark.clone() } else { light.clone() };
            s.score = [3, 7][i];
        }
        let cfg = TrainConfig {
            epochs_per_iteration: 40,
            batch_size: 2,
            ..quick()
        };
        let net = build_default_network(8, &cfg).unwrap();
        let trained = train_initial(&net, &DatasetView::full(&base), &cfg).unwrap().network;
        assert_eq!(classify(&trained, &dark).unwrap(), 3);
        assert_eq!(classify(&trained, &light).unwrap(), 7);
        assert_eq!(quadratic_loss(&trained, &base).unwrap(), 0.0);
    }

    #[test]
    fn likelihoods_cover_every_sample() {
        let base = tiny_base(12);
        let net = build_default_network(8, &quick()).unwrap();
        for mode in [LikelihoodMode::Sigmoid, LikelihoodMode::Softmax] {
            let t = compute_likelihoods(&net, &base, mode).unwrap();
            assert_eq!(t.rows.len(), 12);
            assert!(t.rows.iter().zip(&base).all(|(r, s)| r.id == s.id && r.likelihoods.len() == 8));
            assert!(t.rows.iter().flat_map(|r| &r.likelihoods).all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn head_logits_stay_centred() {
        let base = tiny_base(24);
        let run = repetitive_train(&base, &TrainConfig { max_iterations: 2, ..quick() }).unwrap();
        for net in &run.checkpoints {
            let sum: f32 = net.logits(&base[0].image).unwrap().iter().sum();
            assert!(sum.abs() < 1e-3, "{sum}");
        }
    }

    #[test]
    fn single_iteration_run() {
        let base = tiny_base(24);
        let run = repetitive_train(&base, &TrainConfig { max_iterations: 1, ..quick() }).unwrap();
        assert_eq!(run.iterations(), 1);
        assert_eq!(run.stop_reason, StopReason::MaxIterations);
        assert_eq!(run.remaining_counts, vec![24]);
        assert!(run.thresholds_used[0].is_none());
    }

    #[test]
    fn loose_threshold_stops_after_first_network() {
        let base = tiny_base(24);
        let cfg = TrainConfig {
            loss_threshold: 1e6,
            max_iterations: 5,
            ..quick()
        };
        let run = repetitive_train(&base, &cfg).unwrap();
        assert_eq!(run.iterations(), 1);
        assert_eq!(run.stop_reason, StopReason::LossBelowThreshold);
    }

    #[test]
    fn dropped_and_remaining_partition_the_base() {
        let base = tiny_base(60);
        let run = repetitive_train(&base, &TrainConfig { max_iterations: 3, ..quick() }).unwrap();
        assert_eq!(run.iterations(), 3);
        for (dropped, &remaining) in run.dropped_sets.iter().zip(&run.remaining_counts) {
            assert_eq!(dropped.len() + remaining, 60);
        }
    }
}
