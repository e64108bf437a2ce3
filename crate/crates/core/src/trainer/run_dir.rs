//! On-disk layout of a training run.
//!
//! ```text
//! net_<i>.ckpt        network after iteration i
//! dropped_<i>.csv     ids excluded from iteration i (header `id`)
//! history.csv         iteration,loss,K1,K2,remaining_count
//! config.txt          training configuration
//! stop_reason.txt
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::{DropoutThresholds, IterationRecord, StopReason, TrainConfig, TrainRun};
use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::{load_checkpoint, save_checkpoint};

const HISTORY_HEADER: &str = "iteration,loss,K1,K2,remaining_count\n";

/// Writer for a run directory. History is rewritten whole after each iteration.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    history: String,
}

impl RunDir {
    /// Prepares `path`; an existing run there is an error unless `force` is set.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.join("history.csv").exists() && !force {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --force to overwrite",
                path.display()
            )));
        }
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        if force {
            clear_run_files(path)?;
        }
        Ok(RunDir {
            path: path.to_path_buf(),
            history: HISTORY_HEADER.to_string(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_config(&self, cfg: &TrainConfig, extra: &FlatConfig) -> Result<()> {
        let mut flat = extra.clone();
        cfg.write_into(&mut flat);
        write_atomic(&self.path.join("config.txt"), flat.render().as_bytes())
    }

    pub fn record(&mut self, rec: &IterationRecord) -> Result<()> {
        save_checkpoint(rec.network, rec.iteration as u32, &self.path.join(format!("net_{}.ckpt", rec.iteration)))?;
        let mut dropped = String::from("id\n");
        for id in rec.dropped {
            dropped.push_str(&format!("{id}\n"));
        }
        write_atomic(&self.path.join(format!("dropped_{}.csv", rec.iteration)), dropped.as_bytes())?;
        let (k1, k2) = match rec.thresholds {
            Some(th) => (th.k1.to_string(), th.k2.to_string()),
            None => (String::new(), String::new()),
        };
        self.history
            .push_str(&format!("{},{:.6},{k1},{k2},{}\n", rec.iteration, rec.loss, rec.remaining));
        write_atomic(&self.path.join("history.csv"), self.history.as_bytes())
    }

    pub fn finish(&self, reason: StopReason) -> Result<()> {
        write_atomic(&self.path.join("stop_reason.txt"), format!("{reason}\n").as_bytes())
    }
}

fn clear_run_files(path: &Path) -> Result<()> {
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let ours = (name.starts_with("net_") && name.ends_with(".ckpt"))
            || (name.starts_with("dropped_") && name.ends_with(".csv"))
            || matches!(name.as_str(), "history.csv" | "config.txt" | "stop_reason.txt");
        if ours {
            std::fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

struct HistoryRow {
    loss: f64,
    thresholds: Option<DropoutThresholds>,
    remaining: usize,
}

fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = read(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER.trim_end()) {
        return Err(bad(path, 1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n as u64 + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad(path, lineno, "expected 5 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(path, lineno, format!("bad number {s:?}")));
        if cols[0].parse::<usize>().ok() != Some(rows.len() + 1) {
            return Err(bad(path, lineno, "iterations must count up from 1"));
        }
        let thresholds = match (cols[2], cols[3]) {
            ("", "") => None,
            (a, b) => Some(DropoutThresholds { k1: num(a)?, k2: num(b)? }),
        };
        rows.push(HistoryRow {
            loss: num(cols[1])?,
            thresholds,
            remaining: cols[4]
                .parse()
                .map_err(|_| bad(path, lineno, format!("bad count {:?}", cols[4])))?,
        });
    }
    Ok(rows)
}

fn read_dropped(path: &Path) -> Result<BTreeSet<usize>> {
    let text = read(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("id") {
        return Err(bad(path, 1, "header must be `id`"));
    }
    lines
        .enumerate()
        .map(|(n, l)| l.trim().parse().map_err(|_| bad(path, n as u64 + 2, format!("bad id {l:?}"))))
        .collect()
}

/// Reads a run directory back. A missing stop reason (interrupted run) reads as max iterations.
pub fn load_run(dir: &Path) -> Result<TrainRun> {
    let history = read_history(&dir.join("history.csv"))?;
    if history.is_empty() {
        return Err(Error::InsufficientCheckpoints {
            available: 0,
            latest: 1,
            earlier: 1,
        });
    }
    let mut run = TrainRun {
        checkpoints: Vec::with_capacity(history.len()),
        losses: Vec::new(),
        dropped_sets: Vec::new(),
        thresholds_used: Vec::new(),
        remaining_counts: Vec::new(),
        stop_reason: StopReason::MaxIterations,
    };
    for (i, row) in history.into_iter().enumerate() {
        let iteration = i + 1;
        let ckpt = load_checkpoint(&dir.join(format!("net_{iteration}.ckpt")))?;
        if ckpt.iteration as usize != iteration {
            return Err(Error::CorruptCheckpoint(format!(
                "net_{iteration}.ckpt records iteration {}",
                ckpt.iteration
            )));
        }
        run.checkpoints.push(ckpt.network);
        run.losses.push(row.loss);
        run.dropped_sets.push(read_dropped(&dir.join(format!("dropped_{iteration}.csv")))?);
        run.thresholds_used.push(row.thresholds);
        run.remaining_counts.push(row.remaining);
    }
    let reason_path = dir.join("stop_reason.txt");
    if reason_path.exists() {
        run.stop_reason = read(&reason_path)?.parse()?;
    }
    Ok(run)
}

/// Loads `config.txt` of a run directory.
pub fn load_run_config(dir: &Path) -> Result<FlatConfig> {
    FlatConfig::load(&dir.join("config.txt"))
}
