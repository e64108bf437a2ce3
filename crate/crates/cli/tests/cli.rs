use std::path::Path;
use std::process::{Command, Output};

fn reptrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reptrain"))
        .args(args)
        .env("REPTRAIN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["", "images", "masks"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for f in names.into_iter().filter(|f| f.is_file()) {
            files.push((f.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&f).unwrap()));
        }
    }
    files
}

const FAST: &[&str] = &["--synth-n", "48", "--image-size", "16", "--epochs", "1", "--seed", "3"];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", p(out)];
    args.extend_from_slice(FAST);
    args.extend_from_slice(extra);
    reptrain(&args)
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&reptrain(&["synth", "--out", p(&a), "--n", "40", "--size", "16", "--seed", "7"]));
    assert!(stdout.contains("majority order"));
    ok(&reptrain(&["synth", "--out", p(&b), "--n", "40", "--size", "16", "--seed", "7"]));
    assert_eq!(tree(&a), tree(&b));
    assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 40);
}

#[test]
fn synth_validation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = reptrain(&["synth", "--out", p(dir.path()), "--proportions", "3:0.5,4:0.4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum"));
    assert_eq!(reptrain(&["synth", "--bogus"]).status.code(), Some(2));
}

#[test]
fn synth_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--out", p(dir.path()), "--n", "10", "--size", "8"];
    ok(&reptrain(&args));
    assert_eq!(reptrain(&args).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&reptrain(&forced));
}

#[test]
fn train_single_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&train(&run, &["--max-iterations", "1"]));
    assert!(run.join("net_1.ckpt").exists());
    assert!(!run.join("net_2.ckpt").exists());
    assert_eq!(std::fs::read_to_string(run.join("stop_reason.txt")).unwrap().trim(), "max_iterations");
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn train_large_threshold_stops_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&train(&run, &["--loss-threshold", "100", "--max-iterations", "5"]));
    assert!(!run.join("net_2.ckpt").exists());
    assert_eq!(
        std::fs::read_to_string(run.join("stop_reason.txt")).unwrap().trim(),
        "loss_below_threshold"
    );
}

#[test]
fn train_is_deterministic_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&train(&a, &["--max-iterations", "3", "--loss-threshold", "0.001"]));
    ok(&train(&b, &["--max-iterations", "3", "--loss-threshold", "0.001"]));
    let ha = std::fs::read(a.join("history.csv")).unwrap();
    assert_eq!(ha, std::fs::read(b.join("history.csv")).unwrap());
    assert_eq!(String::from_utf8(ha).unwrap().lines().count(), 4);
    assert_eq!(std::fs::read(a.join("net_3.ckpt")).unwrap(), std::fs::read(b.join("net_3.ckpt")).unwrap());

    assert_eq!(train(&a, &["--max-iterations", "3"]).status.code(), Some(2));
    ok(&train(&a, &["--max-iterations", "1", "--force"]));
    assert!(!a.join("net_3.ckpt").exists());
}

#[test]
fn train_from_manifest_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&reptrain(&["synth", "--out", p(&data), "--n", "30", "--size", "16", "--seed", "1"]));
    let cfg = dir.path().join("train.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# small run\nmanifest = {}\nimage_size = 16\nepochs_per_iteration = 1\nmax_iterations = 2\nloss_threshold = 0.001\n",
            data.join("manifest.csv").display()
        ),
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&reptrain(&["train", "--out", p(&run), "--config", p(&cfg), "--max-iterations", "1"]));
    assert!(run.join("net_1.ckpt").exists());
    assert!(!run.join("net_2.ckpt").exists());
    let written = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(written.contains("max_iterations = 1"));
    assert!(written.contains("manifest = "));

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = reptrain(&["train", "--out", p(&dir.path().join("r2")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_without_data_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = reptrain(&["train", "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = reptrain(&["train", "--out", p(&dir.path().join("run")), "--manifest", "/no/such.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&train(&run, &["--max-iterations", "2", "--loss-threshold", "0.001"]));
    let stdout = ok(&reptrain(&["eval", "--run", p(&run), "--holdout-n", "20"]));
    assert!(stdout.contains("share>4"));
    let report = run.join("report");
    let t1 = std::fs::read_to_string(report.join("table1.csv")).unwrap();
    assert_eq!(t1.lines().next().unwrap(), "score,net_1,net_2");
    assert_eq!(t1.lines().count(), 9);
    let t3 = std::fs::read_to_string(report.join("table3.csv")).unwrap();
    assert_eq!(t3.lines().count(), 9);
    assert!(std::fs::read_to_string(report.join("summary.md")).unwrap().contains("above 4"));
    assert!(report.join("table2.csv").exists());

    // rerun with --force is byte-identical
    let before = std::fs::read(report.join("table3.csv")).unwrap();
    assert_eq!(reptrain(&["eval", "--run", p(&run), "--holdout-n", "20"]).status.code(), Some(2));
    ok(&reptrain(&["eval", "--run", p(&run), "--holdout-n", "20", "--force"]));
    assert_eq!(before, std::fs::read(report.join("table3.csv")).unwrap());

    let out = reptrain(&["eval", "--run", p(&run), "--holdout", "/no/such/manifest.csv", "--force"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&train(&run, &["--max-iterations", "2", "--loss-threshold", "0.001"]));
    std::fs::remove_file(run.join("net_2.ckpt")).unwrap();
    let out = reptrain(&["eval", "--run", p(&run), "--holdout-n", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn highlight_pairs_and_batches() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&reptrain(&["synth", "--out", p(&data), "--n", "6", "--size", "16", "--seed", "2"]));
    let run = dir.path().join("run");
    ok(&train(&run, &["--max-iterations", "3", "--loss-threshold", "0.001"]));
    let image = data.join("images").join("00000.png");
    let out = dir.path().join("hl");

    ok(&reptrain(&["highlight", "--run", p(&run), "--input", p(&image), "--out", p(&out)]));
    ok(&reptrain(&["highlight", "--run", p(&run), "--input", p(&image), "--out", p(&out), "--pair", "2,1"]));
    let last = std::fs::read(out.join("00000_3-2_overlay.png")).unwrap();
    let first = std::fs::read(out.join("00000_2-1_overlay.png")).unwrap();
    assert_ne!(last, first);
    assert!(out.join("00000_3-2_correlations.csv").exists());
    let overlay = std::fs::read(out.join("00000_3-2_overlay.png")).unwrap();
    assert_eq!(&overlay[1..4], b"PNG");

    let batch = dir.path().join("batch");
    ok(&reptrain(&["highlight", "--run", p(&run), "--input", p(&data.join("images")), "--out", p(&batch)]));
    let overlays = std::fs::read_dir(&batch)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with("_overlay.png"))
        .count();
    assert_eq!(overlays, 6);

    let code = |args: &[&str]| reptrain(args).status.code();
    assert_eq!(code(&["highlight", "--run", p(&run), "--input", "/no/such.png"]), Some(2));
    assert_eq!(code(&["highlight", "--run", p(&run), "--input", p(&image), "--k", "3"]), Some(2));
    assert_eq!(code(&["highlight", "--run", p(&run), "--input", p(&image), "--pair", "1,2"]), Some(2));
}

#[test]
fn inspect_prints_header() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&train(&run, &["--max-iterations", "1"]));
    let stdout = ok(&reptrain(&["inspect", p(&run.join("net_1.ckpt"))]));
    assert!(stdout.contains("iteration     1"));
    assert!(stdout.contains("[2, 3, 4, 5, 6, 7, 8, 9]"));
    let stdout = ok(&reptrain(&["inspect", p(&run)]));
    assert!(stdout.contains("stop reason max_iterations"));

    std::fs::write(dir.path().join("junk.ckpt"), b"RPTN").unwrap();
    assert_eq!(reptrain(&["inspect", p(&dir.path().join("junk.ckpt"))]).status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_reptrain"))
        .args(["inspect", "."])
        .env("REPTRAIN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
