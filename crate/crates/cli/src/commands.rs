use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use reptrain::config::FlatConfig;
use reptrain::data::{
    default_proportions, export_dataset, load_image, load_manifest, parse_proportions, synth_generate, Sample,
    ScoreDistribution, SynthSpec,
};
use reptrain::eval::emit_report;
use reptrain::highlight::{extract_highlight, render_overlay, save_difference_map, write_correlations, HighlightConfig};
use reptrain::nn::load_checkpoint;
use reptrain::trainer::{load_run, load_run_config, repetitive_train_with, RunDir, TrainConfig, TRAIN_KEYS};

/// Bad invocation: exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "reptrain", version, about = "Repetitive sample drop-out training and highlight extraction")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scored image set with truth masks.
    Synth(SynthArgs),
    /// Run repetitive drop-out training into a run directory.
    Train(TrainArgs),
    /// Write accuracy, loss and assigned-rate tables for a run.
    Eval(EvalArgs),
    /// Extract highlight regions for one image or a directory of images.
    Highlight(HighlightArgs),
    /// Print a checkpoint header, or a run directory's history.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score mix as `score:fraction,...`, summing to 1.
    #[arg(long)]
    proportions: Option<String>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `path,score` manifest; image paths are relative to --image-root.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Defaults to the manifest's directory.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Generate this many synthetic samples in memory instead of reading a manifest.
    #[arg(long)]
    synth_n: Option<usize>,
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    proportions: Option<String>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    retrain_lr_scale: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    loss_threshold: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    target_fraction: Option<f64>,
    /// Test the sample's own class likelihood for the second and third majority classes.
    #[arg(long)]
    own_class: bool,
    /// `sigmoid` or `softmax`.
    #[arg(long)]
    likelihood: Option<String>,
    #[arg(long)]
    freeze_conv: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Defaults to `<run>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Labelled holdout manifest; a synthetic holdout is generated otherwise.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long)]
    holdout_root: Option<PathBuf>,
    #[arg(long, default_value_t = 310)]
    holdout_n: usize,
    /// Defaults to the run seed plus 1000.
    #[arg(long)]
    holdout_seed: Option<u64>,
    /// Summary share counts images assigned strictly above this score.
    #[arg(long, default_value_t = 4)]
    above: i32,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct HighlightArgs {
    #[arg(long)]
    run: PathBuf,
    /// Image file, or directory of PNG images.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to `<run>/highlights`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Explicit iterations `I,J` with J < I, e.g. `2,1`.
    #[arg(long, conflicts_with = "k")]
    pair: Option<String>,
    /// Compare the last iteration with the one k before it.
    #[arg(long)]
    k: Option<usize>,
    /// Use conv1 outputs before ReLU.
    #[arg(long)]
    pre_activation: bool,
    /// Cluster signed differences instead of magnitudes.
    #[arg(long)]
    signed: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Checkpoint file or run directory.
    path: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Highlight(a) => highlight(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn print_distribution(samples: &[Sample]) {
    let dist = ScoreDistribution::from_scores(samples.iter().map(|s| s.score));
    println!("score  count  fraction");
    for (score, count) in &dist.counts {
        println!("{score:>5}  {count:>5}  {:.4}", *count as f64 / dist.total() as f64);
    }
    println!("majority order: {:?}", dist.ranked_majority);
}

fn synth(a: SynthArgs) -> Result<()> {
    let proportions = match &a.proportions {
        Some(text) => parse_proportions(text)?,
        None => default_proportions(),
    };
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    if a.out.join("manifest.csv").exists() && !a.force {
        return Err(usage(format!(
            "{} already holds a dataset; pass --force to overwrite",
            a.out.display()
        )));
    }
    let samples = synth_generate(&SynthSpec {
        n: a.n,
        proportions,
        image_size: a.size,
        seed: a.seed,
    })?;
    export_dataset(&samples, &a.out)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    print_distribution(&samples);
    Ok(())
}

const DATA_KEYS: &[&str] = &["manifest", "image_root", "image_size", "synth_n", "synth_seed", "synth_proportions"];

/// Config file merged with flag overrides.
fn train_settings(a: &TrainArgs) -> Result<FlatConfig> {
    let mut flat = match &a.config {
        Some(path) => {
            require_exists(path, "config file")?;
            FlatConfig::load(path)?
        }
        None => FlatConfig::default(),
    };
    let known: Vec<&str> = TRAIN_KEYS.iter().chain(DATA_KEYS).copied().collect();
    flat.check_known(&known)?;

    let mut set = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            flat.set(key, v);
        }
    };
    set("manifest", a.manifest.as_ref().map(|p| p.display().to_string()));
    set("image_root", a.image_root.as_ref().map(|p| p.display().to_string()));
    set("synth_n", a.synth_n.map(|v| v.to_string()));
    set("synth_seed", a.synth_seed.map(|v| v.to_string()));
    set("synth_proportions", a.proportions.clone());
    set("image_size", a.image_size.map(|v| v.to_string()));
    set("seed", a.seed.map(|v| v.to_string()));
    set("epochs_per_iteration", a.epochs.map(|v| v.to_string()));
    set("lr", a.lr.map(|v| v.to_string()));
    set("retrain_lr_scale", a.retrain_lr_scale.map(|v| v.to_string()));
    set("momentum", a.momentum.map(|v| v.to_string()));
    set("weight_decay", a.weight_decay.map(|v| v.to_string()));
    set("batch_size", a.batch_size.map(|v| v.to_string()));
    set("loss_threshold", a.loss_threshold.map(|v| v.to_string()));
    set("max_iterations", a.max_iterations.map(|v| v.to_string()));
    set("target_remaining_fraction", a.target_fraction.map(|v| v.to_string()));
    set("likelihood_mode", a.likelihood.clone());
    set("literal_condition_mode", a.own_class.then(|| "false".to_string()));
    set("freeze_convolutions", a.freeze_conv.then(|| "true".to_string()));
    Ok(flat)
}

fn load_training_data(flat: &FlatConfig, cfg: &TrainConfig) -> Result<(Vec<Sample>, FlatConfig)> {
    let size: usize = flat.parsed("image_size")?.unwrap_or(32);
    let mut data = FlatConfig::default();
    data.set("image_size", size);
    match (flat.get("manifest"), flat.get("synth_n")) {
        (Some(_), Some(_)) => Err(usage("give either a manifest or synth_n, not both")),
        (None, None) => Err(usage("no training data: pass --manifest or --synth-n")),
        (Some(manifest), None) => {
            let manifest = PathBuf::from(manifest);
            require_exists(&manifest, "manifest")?;
            let root = match flat.get("image_root") {
                Some(r) => PathBuf::from(r),
                None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let samples = load_manifest(&manifest, &root, &cfg.class_scores, size)?;
            data.set("manifest", manifest.display());
            data.set("image_root", root.display());
            Ok((samples, data))
        }
        (None, Some(_)) => {
            let n: usize = flat.parsed("synth_n")?.expect("present");
            let seed: u64 = flat.parsed("synth_seed")?.unwrap_or(cfg.seed);
            let proportions = match flat.get("synth_proportions") {
                Some(p) => {
                    data.set("synth_proportions", p);
                    parse_proportions(p)?
                }
                None => default_proportions(),
            };
            let samples = synth_generate(&SynthSpec {
                n,
                proportions,
                image_size: size,
                seed,
            })?;
            data.set("synth_n", n);
            data.set("synth_seed", seed);
            Ok((samples, data))
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let flat = train_settings(&a)?;
    let mut cfg = TrainConfig::default();
    cfg.apply(&flat)?;
    let (samples, data) = load_training_data(&flat, &cfg)?;
    if samples.is_empty() {
        return Err(reptrain::Error::EmptyDataset.into());
    }
    let mut run_dir = RunDir::create(&a.out, a.force)?;
    run_dir.write_config(&cfg, &data)?;
    eprintln!("training on {} samples into {}", samples.len(), a.out.display());
    let total = samples.len();
    let run = repetitive_train_with(&samples, &cfg, |rec| {
        run_dir.record(rec)?;
        match rec.thresholds {
            Some(th) => eprintln!(
                "iteration {}: loss {:.4}  K1 {} K2 {}  remaining {}/{total}",
                rec.iteration, rec.loss, th.k1, th.k2, rec.remaining
            ),
            None => eprintln!("iteration {}: loss {:.4}  (full dataset)", rec.iteration, rec.loss),
        }
        Ok(())
    })
    .with_context(|| format!("training into {}", a.out.display()))?;
    run_dir.finish(run.stop_reason)?;
    println!(
        "stopped after {} iteration(s): {}; final loss {:.4}",
        run.iterations(),
        run.stop_reason,
        run.losses.last().expect("at least one iteration")
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    require_exists(&a.run.join("history.csv"), "run history")?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("report"));
    if out.join("table1.csv").exists() && !a.force {
        return Err(usage(format!("{} already holds a report; pass --force to overwrite", out.display())));
    }
    if let Some(h) = &a.holdout {
        require_exists(h, "holdout manifest")?;
    }
    let cfg_flat = load_run_config(&a.run)?;
    let run = load_run(&a.run).context("loading run")?;
    let net = run.last();
    let class_scores = net.class_scores().to_vec();
    let size = net.input_shape()[1];

    let mut cfg = TrainConfig::default();
    cfg.apply(&cfg_flat)?;
    let base = match cfg_flat.get("manifest") {
        Some(m) => {
            let root = cfg_flat.get("image_root").map(PathBuf::from).unwrap_or_default();
            load_manifest(Path::new(m), &root, &class_scores, size)?
        }
        None => synth_generate(&SynthSpec {
            n: cfg_flat.parsed("synth_n")?.unwrap_or(800),
            proportions: match cfg_flat.get("synth_proportions") {
                Some(p) => parse_proportions(p)?,
                None => default_proportions(),
            },
            image_size: size,
            seed: cfg_flat.parsed("synth_seed")?.unwrap_or(cfg.seed),
        })?,
    };
    let holdout = match &a.holdout {
        Some(h) => {
            let root = a
                .holdout_root
                .clone()
                .unwrap_or_else(|| h.parent().map(Path::to_path_buf).unwrap_or_default());
            load_manifest(h, &root, &class_scores, size)?
        }
        None => synth_generate(&SynthSpec {
            n: a.holdout_n,
            proportions: default_proportions(),
            image_size: size,
            seed: a.holdout_seed.unwrap_or(cfg.seed + 1000),
        })?,
    };
    let report = emit_report(&run, &base, &holdout, true, a.above, &out)?;
    println!("iteration  loss      share>{}", a.above);
    for ((i, loss), share) in report.losses.iter().zip(report.share_above()) {
        println!("{i:>9}  {loss:.4}    {share:.4}");
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn parse_pair(text: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("--pair expects `I,J` with I > J ≥ 1, got {text:?}"));
    let (i, j) = text.split_once(',').ok_or_else(bad)?;
    let i: usize = i.trim().parse().map_err(|_| bad())?;
    let j: usize = j.trim().parse().map_err(|_| bad())?;
    if j == 0 || j >= i {
        return Err(bad());
    }
    Ok((i, j))
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    require_exists(input, "input")?;
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no PNG images in {}", input.display())));
    }
    Ok(files)
}

fn highlight(a: HighlightArgs) -> Result<()> {
    require_exists(&a.run.join("history.csv"), "run history")?;
    let inputs = image_inputs(&a.input)?;
    let mut cfg = HighlightConfig {
        post_activation: !a.pre_activation,
        signed: a.signed,
        ..HighlightConfig::default()
    };
    if let Some(p) = &a.pair {
        let (i, j) = parse_pair(p)?;
        cfg.latest = Some(i);
        cfg.k = i - j;
    } else if let Some(k) = a.k {
        cfg.k = k;
    }
    let run = load_run(&a.run).context("loading run")?;
    let (i, j) = cfg.pair(run.iterations())?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("highlights"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let size = run.last().input_shape()[1];

    for path in inputs {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = |suffix: &str| out.join(format!("{stem}_{i}-{j}_{suffix}"));
        let overlay_path = name("overlay.png");
        if overlay_path.exists() && !a.force {
            return Err(usage(format!("{} exists; pass --force to overwrite", overlay_path.display())));
        }
        let image = load_image(&path, size)?;
        let h = extract_highlight(&run, &image, &cfg)?;
        render_overlay(&image, &h.diff, &h.mask, &overlay_path)?;
        save_difference_map(&h.diff, &name("diff.png"))?;
        write_correlations(&name("correlations.csv"), &h.correlations)?;
        println!(
            "{}: channel {} (corr {:.4}), highlight {} px, centroids {:.4}/{:.4}",
            path.display(),
            h.diff.channel,
            h.correlations[h.diff.channel],
            h.mask.mask.count(),
            h.mask.low,
            h.mask.high
        );
    }
    Ok(())
}

fn print_checkpoint(path: &Path) -> Result<()> {
    let ckpt = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    let net = &ckpt.network;
    let [c, h, w] = net.input_shape();
    println!("{}", path.display());
    println!("  iteration     {}", ckpt.iteration);
    println!("  input         {c}×{h}×{w}");
    println!("  class scores  {:?}", net.class_scores());
    let mut total = 0;
    for (l, (spec, params)) in net.layers().iter().zip(net.params()).enumerate() {
        let count = params.as_ref().map_or(0, |p| p.weight.len() + p.bias.len());
        total += count;
        println!("  [{l}] {spec}  params {count}");
    }
    println!("  total params  {total}");
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    require_exists(&a.path, "path")?;
    if a.path.is_file() {
        return print_checkpoint(&a.path);
    }
    let run = load_run(&a.path).context("loading run")?;
    println!("{} iteration(s), stop reason {}", run.iterations(), run.stop_reason);
    println!("iteration  loss      K1    K2    remaining");
    for i in 0..run.iterations() {
        let (k1, k2) = match run.thresholds_used[i] {
            Some(th) => (format!("{:.2}", th.k1), format!("{:.2}", th.k2)),
            None => ("-".into(), "-".into()),
        };
        println!(
            "{:>9}  {:.4}    {k1:<5} {k2:<5} {}",
            i + 1,
            run.losses[i],
            run.remaining_counts[i]
        );
    }
    print_checkpoint(&a.path.join(format!("net_{}.ckpt", run.iterations())))
}
