//! Evaluation tables over a training run: per-class accuracy, loss series,
//! and assigned rates on unlabelled images.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::Network;
use crate::tensor::Tensor;
use crate::trainer::TrainRun;

/// Predicted score for every sample, in order.
pub fn predict_all(net: &Network, samples: &[Sample]) -> Result<Vec<i32>> {
    predict_images(net, samples.iter().map(|s| &s.image).collect::<Vec<_>>().as_slice())
}

fn predict_images(net: &Network, images: &[&Tensor]) -> Result<Vec<i32>> {
    images.par_iter().map(|img| net.classify(img)).collect()
}

/// Accuracy per class of `net.class_scores()`; `None` where a class has no samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub class_scores: Vec<i32>,
    pub cells: Vec<Option<f64>>,
}

impl ClassAccuracy {
    pub fn get(&self, score: i32) -> Option<f64> {
        let i = self.class_scores.iter().position(|&s| s == score)?;
        self.cells[i]
    }

    /// Largest minus smallest present accuracy.
    pub fn spread(&self) -> f64 {
        let present: Vec<f64> = self.cells.iter().flatten().copied().collect();
        let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
        if present.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

fn accuracy_from_predictions(class_scores: &[i32], labels: &[i32], predicted: &[i32]) -> ClassAccuracy {
    let cells = class_scores
        .iter()
        .map(|&s| {
            let (mut hit, mut n) = (0usize, 0usize);
            for (&l, &p) in labels.iter().zip(predicted) {
                if l == s {
                    n += 1;
                    hit += (p == s) as usize;
                }
            }
            (n > 0).then(|| hit as f64 / n as f64)
        })
        .collect();
    ClassAccuracy {
        class_scores: class_scores.to_vec(),
        cells,
    }
}

pub fn per_class_accuracy(net: &Network, base: &[Sample]) -> Result<ClassAccuracy> {
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = predict_all(net, base)?;
    let labels: Vec<i32> = base.iter().map(|s| s.score).collect();
    Ok(accuracy_from_predictions(net.class_scores(), &labels, &predicted))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignedRates {
    pub class_scores: Vec<i32>,
    pub counts: Vec<usize>,
    pub rates: Vec<f64>,
}

impl AssignedRates {
    pub fn from_predictions(class_scores: &[i32], predicted: &[i32]) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let counts: Vec<usize> = class_scores
            .iter()
            .map(|&s| predicted.iter().filter(|&&p| p == s).count())
            .collect();
        let total = predicted.len() as f64;
        Ok(AssignedRates {
            class_scores: class_scores.to_vec(),
            rates: counts.iter().map(|&c| c as f64 / total).collect(),
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of images assigned a score strictly above `score`.
    pub fn share_above(&self, score: i32) -> f64 {
        let above: usize = self
            .class_scores
            .iter()
            .zip(&self.counts)
            .filter(|(&s, _)| s > score)
            .map(|(_, &c)| c)
            .sum();
        above as f64 / self.total() as f64
    }
}

/// Fraction of `images` classified into each class. Labels are not needed.
pub fn assigned_rates(net: &Network, images: &[&Tensor]) -> Result<AssignedRates> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    AssignedRates::from_predictions(net.class_scores(), &predict_images(net, images)?)
}

/// `(iteration, loss)` rows copied from the run.
pub fn loss_table(run: &TrainRun) -> Vec<(usize, f64)> {
    run.losses.iter().enumerate().map(|(i, &l)| (i + 1, l)).collect()
}

/// Everything `emit_report` wrote, for display.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub accuracy: Vec<ClassAccuracy>,
    pub holdout_accuracy: Option<Vec<ClassAccuracy>>,
    pub losses: Vec<(usize, f64)>,
    pub rates: Vec<AssignedRates>,
    /// Score above which assignments are counted in the summary share.
    pub above: i32,
}

impl Report {
    pub fn share_above(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.share_above(self.above)).collect()
    }
}

fn network_header(first: &str, n: usize) -> String {
    let mut h = first.to_string();
    for i in 1..=n {
        write!(h, ",net_{i}").unwrap();
    }
    h.push('\n');
    h
}

fn accuracy_csv(rows: &[ClassAccuracy]) -> String {
    let mut out = network_header("score", rows.len());
    for (c, score) in rows[0].class_scores.iter().enumerate() {
        out.push_str(&score.to_string());
        for row in rows {
            match row.cells[c] {
                Some(a) => write!(out, ",{a:.6}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn rates_csv(rows: &[AssignedRates]) -> String {
    let mut out = network_header("score", rows.len());
    for (c, score) in rows[0].class_scores.iter().enumerate() {
        out.push_str(&score.to_string());
        for row in rows {
            write!(out, ",{:.6}", row.rates[c]).unwrap();
        }
        out.push('\n');
    }
    out
}

fn summary_md(report: &Report, holdout_len: usize) -> String {
    let shares = report.share_above();
    let mut s = String::from("# Run summary\n\n");
    writeln!(s, "Iterations: {}\n", report.losses.len()).unwrap();
    s.push_str("| network | loss | share assigned above ");
    writeln!(s, "{} ({holdout_len} holdout images) |", report.above).unwrap();
    s.push_str("|---|---|---|\n");
    for ((i, loss), share) in report.losses.iter().zip(&shares) {
        writeln!(s, "| net_{i} | {loss:.6} | {share:.4} |").unwrap();
    }
    let (first, last) = (shares[0], shares[shares.len() - 1]);
    writeln!(s, "\nShare above {}: {first:.4} under net_1, {last:.4} under net_{}.", report.above, shares.len()).unwrap();
    if first > 0.0 {
        writeln!(s, "Relative change: {:+.1}%.", (last / first - 1.0) * 100.0).unwrap();
    }
    s.push_str("\ntable1.csv: per-class accuracy on the training set.\n");
    if report.holdout_accuracy.is_some() {
        s.push_str("table1_holdout.csv: per-class accuracy on the labelled holdout set.\n");
    }
    s.push_str("table2.csv: quadratic loss on the training set.\n");
    s.push_str("table3.csv: assigned rate per class on the holdout set.\n");
    s
}

/// Writes `table1.csv`, `table2.csv`, `table3.csv` and `summary.md` under
/// `out_dir`, plus `table1_holdout.csv` when `holdout_labelled` is set.
pub fn emit_report(
    run: &TrainRun,
    base: &[Sample],
    holdout: &[Sample],
    holdout_labelled: bool,
    above: i32,
    out_dir: &Path,
) -> Result<Report> {
    if holdout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let accuracy = run
        .checkpoints
        .iter()
        .map(|net| per_class_accuracy(net, base))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<&Tensor> = holdout.iter().map(|s| &s.image).collect();
    let mut rates = Vec::new();
    let mut holdout_accuracy = Vec::new();
    let labels: Vec<i32> = holdout.iter().map(|s| s.score).collect();
    for net in &run.checkpoints {
        let predicted = predict_images(net, &images)?;
        rates.push(AssignedRates::from_predictions(net.class_scores(), &predicted)?);
        if holdout_labelled {
            holdout_accuracy.push(accuracy_from_predictions(net.class_scores(), &labels, &predicted));
        }
    }
    let report = Report {
        accuracy,
        holdout_accuracy: holdout_labelled.then_some(holdout_accuracy),
        losses: loss_table(run),
        rates,
        above,
    };

    write_atomic(&out_dir.join("table1.csv"), accuracy_csv(&report.accuracy).as_bytes())?;
    if let Some(h) = &report.holdout_accuracy {
        write_atomic(&out_dir.join("table1_holdout.csv"), accuracy_csv(h).as_bytes())?;
    }
    let mut t2 = String::from("iteration,loss\n");
    for (i, l) in &report.losses {
        writeln!(t2, "{i},{l:.6}").unwrap();
    }
    write_atomic(&out_dir.join("table2.csv"), t2.as_bytes())?;
    write_atomic(&out_dir.join("table3.csv"), rates_csv(&report.rates).as_bytes())?;
    write_atomic(&out_dir.join("summary.md"), summary_md(&report, holdout.len()).as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let acc = accuracy_from_predictions(&[2, 3, 4], &[2, 3, 3], &[2, 3, 3]);
        assert_eq!(acc.cells, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(acc.get(4), None);
        assert_eq!(acc.spread(), 0.0);
    }

    #[test]
    fn rate_examples() {
        let mut predicted = vec![7; 62];
        predicted.extend(vec![4; 248]);
        let r = AssignedRates::from_predictions(&[2, 3, 4, 5, 6, 7, 8, 9], &predicted).unwrap();
        assert!((r.rates[5] - 0.2).abs() < 1e-12);
        assert!((r.rates.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((r.share_above(4) - 0.2).abs() < 1e-12);

        let single = AssignedRates::from_predictions(&[2, 3], &[3]).unwrap();
        assert_eq!(single.rates, vec![0.0, 1.0]);
        assert!(AssignedRates::from_predictions(&[2, 3], &[]).is_err());
    }

    #[test]
    fn accuracy_csv_shape() {
        let row = ClassAccuracy {
            class_scores: vec![2, 3],
            cells: vec![Some(0.5), None],
        };
        let csv = accuracy_csv(&[row.clone(), row.clone(), row]);
        assert_eq!(csv, "score,net_1,net_2,net_3\n2,0.500000,0.500000,0.500000\n3,,,\n");
    }
}
