use crate::config::FlatConfig;
use crate::error::{Error, Result};

/// How per-class likelihoods are read off the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    /// Sigmoid of each raw logit.
    Sigmoid,
    /// Softmax probabilities.
    Softmax,
}

impl std::str::FromStr for LikelihoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(LikelihoodMode::Sigmoid),
            "softmax" => Ok(LikelihoodMode::Softmax),
            other => Err(Error::Config(format!("unknown likelihood mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for LikelihoodMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LikelihoodMode::Sigmoid => "sigmoid",
            LikelihoodMode::Softmax => "softmax",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub class_scores: Vec<i32>,
    pub epochs_per_iteration: usize,
    pub lr: f32,
    /// Multiplies `lr` for warm-started iterations 2 and later.
    pub retrain_lr_scale: f32,
    pub momentum: f32,
    /// L2 penalty on weights (not biases).
    pub weight_decay: f32,
    pub batch_size: usize,
    /// Anneal the learning rate to zero along a half cosine within each iteration.
    pub cosine_decay: bool,
    /// Stop once the quadratic loss on the original dataset drops below this.
    pub loss_threshold: f64,
    pub max_iterations: usize,
    pub target_remaining_fraction: f64,
    pub threshold_min: f64,
    pub threshold_max: f64,
    pub threshold_step: f64,
    pub seed: u64,
    /// Conditions for the second and third majority classes test the
    /// first majority class's likelihood (true) or the sample's own class (false).
    pub literal_condition_mode: bool,
    pub likelihood_mode: LikelihoodMode,
    pub freeze_convolutions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            class_scores: (2..=9).collect(),
            epochs_per_iteration: 10,
            lr: 0.01,
            retrain_lr_scale: 0.5,
            momentum: 0.9,
            weight_decay: 0.005,
            batch_size: 16,
            cosine_decay: true,
            loss_threshold: 1.8,
            max_iterations: 10,
            target_remaining_fraction: 2.0 / 3.0,
            threshold_min: 0.85,
            threshold_max: 0.95,
            threshold_step: 0.01,
            seed: 0,
            literal_condition_mode: true,
            likelihood_mode: LikelihoodMode::Sigmoid,
            freeze_convolutions: false,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "class_scores",
    "epochs_per_iteration",
    "lr",
    "retrain_lr_scale",
    "momentum",
    "weight_decay",
    "batch_size",
    "cosine_decay",
    "loss_threshold",
    "max_iterations",
    "target_remaining_fraction",
    "threshold_min",
    "threshold_max",
    "threshold_step",
    "seed",
    "literal_condition_mode",
    "likelihood_mode",
    "freeze_convolutions",
];

pub(crate) fn parse_scores(text: &str) -> Result<Vec<i32>> {
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: i32 = lo.trim().parse().map_err(|_| Error::Config(format!("bad score range {text:?}")))?;
        let hi: i32 = hi.trim().parse().map_err(|_| Error::Config(format!("bad score range {text:?}")))?;
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad class score {s:?}")))
        })
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.class_scores.len() < 2 || self.class_scores.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("class_scores {:?} must be ≥ 2 strictly increasing values", self.class_scores));
        }
        if self.batch_size == 0 || self.max_iterations == 0 {
            return fail("batch_size and max_iterations must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.retrain_lr_scale.is_finite() && self.retrain_lr_scale > 0.0) {
            return fail(format!("retrain_lr_scale must be positive, got {}", self.retrain_lr_scale));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.loss_threshold > 0.0) {
            return fail(format!("loss_threshold must be positive, got {}", self.loss_threshold));
        }
        if !(self.target_remaining_fraction > 0.0 && self.target_remaining_fraction <= 1.0) {
            return fail(format!(
                "target_remaining_fraction must be in (0, 1], got {}",
                self.target_remaining_fraction
            ));
        }
        let (lo, hi) = (self.threshold_min, self.threshold_max);
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return fail(format!("threshold bounds [{lo}, {hi}] must satisfy 0 < min ≤ max < 1"));
        }
        if !(self.threshold_step > 0.0) {
            return fail(format!("threshold_step must be positive, got {}", self.threshold_step));
        }
        Ok(())
    }

    /// Grid of candidate thresholds from min to max inclusive.
    pub fn threshold_grid(&self) -> Vec<f64> {
        let steps = ((self.threshold_max - self.threshold_min) / self.threshold_step + 1e-9).floor() as usize;
        (0..=steps)
            .map(|i| ((self.threshold_min + i as f64 * self.threshold_step) * 1e9).round() / 1e9)
            .collect()
    }

    /// Applies any training keys present in `cfg` on top of `self`.
    pub fn apply(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(v) = cfg.get("class_scores") {
            self.class_scores = parse_scores(v)?;
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = cfg.parsed(stringify!($field))? {
                    self.$field = v;
                }
            )*};
        }
        take!(
            epochs_per_iteration,
            lr,
            retrain_lr_scale,
            momentum,
            weight_decay,
            batch_size,
            cosine_decay,
            loss_threshold,
            max_iterations,
            target_remaining_fraction,
            threshold_min,
            threshold_max,
            threshold_step,
            seed,
            literal_condition_mode,
            likelihood_mode,
            freeze_convolutions
        );
        self.validate()
    }

    pub fn write_into(&self, cfg: &mut FlatConfig) {
        let scores: Vec<String> = self.class_scores.iter().map(i32::to_string).collect();
        cfg.set("class_scores", scores.join(","));
        cfg.set("epochs_per_iteration", self.epochs_per_iteration);
        cfg.set("lr", self.lr);
        cfg.set("retrain_lr_scale", self.retrain_lr_scale);
        cfg.set("momentum", self.momentum);
        cfg.set("weight_decay", self.weight_decay);
        cfg.set("batch_size", self.batch_size);
        cfg.set("cosine_decay", self.cosine_decay);
        cfg.set("loss_threshold", self.loss_threshold);
        cfg.set("max_iterations", self.max_iterations);
        cfg.set("target_remaining_fraction", self.target_remaining_fraction);
        cfg.set("threshold_min", self.threshold_min);
        cfg.set("threshold_max", self.threshold_max);
        cfg.set("threshold_step", self.threshold_step);
        cfg.set("seed", self.seed);
        cfg.set("literal_condition_mode", self.literal_condition_mode);
        cfg.set("likelihood_mode", self.likelihood_mode);
        cfg.set("freeze_convolutions", self.freeze_convolutions);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_eleven_points() {
        let grid = TrainConfig::default().threshold_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.85);
        assert_eq!(grid[7], 0.92);
        assert_eq!(grid[10], 0.95);
    }

    #[test]
    fn flat_round_trip() {
        let mut cfg = TrainConfig {
            seed: 99,
            literal_condition_mode: false,
            likelihood_mode: LikelihoodMode::Softmax,
            ..TrainConfig::default()
        };
        cfg.lr = 0.005;
        let mut flat = FlatConfig::default();
        cfg.write_into(&mut flat);
        let mut back = TrainConfig::default();
        back.apply(&FlatConfig::parse(&flat.render()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn score_ranges() {
        assert_eq!(parse_scores("2..9").unwrap(), (2..=9).collect::<Vec<_>>());
        assert_eq!(parse_scores("1, 3,5").unwrap(), vec![1, 3, 5]);
    }

    #[test]
    fn validation() {
        let bad = TrainConfig {
            target_remaining_fraction: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            threshold_min: 0.96,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
