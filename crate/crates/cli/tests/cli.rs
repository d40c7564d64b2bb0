use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nowcast_core::io::{read_frame, read_plot, read_predictions, write_frame};
use nowcast_core::{Frame, Mat};
use tempfile::TempDir;

fn nowcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = nowcast(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    nowcast(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "--out", p(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("frame.csv")
}

fn load(path: &Path) -> Frame {
    read_frame(fs::File::open(path).unwrap(), "test").unwrap()
}

fn save(path: &Path, frame: &Frame) {
    let mut buf = Vec::new();
    write_frame(&mut buf, frame).unwrap();
    fs::write(path, buf).unwrap();
}

#[test]
fn prepare_plain_means_on_toy_posts() {
    let dir = TempDir::new().unwrap();
    let posts = dir.path().join("posts.csv");
    fs::write(&posts, "time_index,user_id,a,b\n1,u1,1.0,10\n1,u2,3.0,20\n2,u1,5.0,0\n").unwrap();
    let out = dir.path().join("prep");
    ok(&["prepare", "--posts", p(&posts), "--no-trust", "--no-clusters", "--smooth", "1", "--out", p(&out)]);
    let f = load(&out.join("frame.csv"));
    assert_eq!(f.timestamps(), &[1, 2]);
    assert_eq!(f.covariates().row(0), &[2.0, 15.0]);
    assert_eq!(f.covariates().row(1), &[5.0, 0.0]);
    assert!(f.targets().iter().all(Option::is_none));
}

#[test]
fn prepare_row_count_follows_smoothing() {
    let dir = TempDir::new().unwrap();
    for smooth in [1usize, 3, 6] {
        let out = dir.path().join(format!("s{smooth}"));
        let s = smooth.to_string();
        ok(&[
            "prepare",
            "--posts",
            p(&fixture("posts.csv")),
            "--targets",
            p(&fixture("targets.csv")),
            "--smooth",
            &s,
            "--out",
            p(&out),
        ]);
        assert_eq!(load(&out.join("frame.csv")).len(), 36 - smooth + 1);
    }
}

#[test]
fn prepare_full_pipeline_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("full");
    ok(&[
        "prepare",
        "--posts",
        p(&fixture("posts.csv")),
        "--users",
        p(&fixture("users.csv")),
        "--trust",
        "--targets",
        p(&fixture("targets.csv")),
        "--clusters",
        "3",
        "--drop-clusters",
        "2",
        "--smooth",
        "3",
        "--pca",
        "0.9",
        "--out",
        p(&out),
    ]);
    for f in ["frame.csv", "report.json", "pca.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"trust_cv_accuracy\": 1.0"), "{report}");
}

#[test]
fn prepare_schema_errors_name_the_line() {
    let dir = TempDir::new().unwrap();
    let posts = dir.path().join("bad.csv");
    fs::write(&posts, "time_index,user_id,a\n1,u1,0.5\n2,u2,oops\n").unwrap();
    let out = nowcast(&["prepare", "--posts", p(&posts), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let out = nowcast(&["prepare", "--posts", p(&posts), "--trust", "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn monitor_counts_and_determinism() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=40", "--seed", "2"]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    ok(&["monitor", "--frame", p(&frame), "--w", "20", "--delta", "3", "--out", p(&a)]);
    ok(&["monitor", "--frame", p(&frame), "--w", "20", "--delta", "3", "--alpha", "0", "--out", p(&b)]);
    ok(&["monitor", "--frame", p(&frame), "--w", "20", "--delta", "3", "--out", p(&c), "--threads", "2"]);
    let preds = read_predictions(fs::File::open(a.join("predictions.csv")).unwrap(), "p").unwrap();
    assert_eq!(preds.len(), 40 - 23);
    assert_eq!(preds[0].time_index, 23);
    for f in ["predictions.csv", "plot.csv", "metrics.json", "hyperparams.csv"] {
        let bytes = fs::read(a.join(f)).unwrap();
        assert_eq!(bytes, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(bytes, fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn monitor_rejects_short_frames_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=30"]);
    let out = nowcast(&["monitor", "--frame", p(&frame), "--w", "28", "--delta", "2", "--out", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("series length 30"));
}

#[test]
fn config_file_with_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=36"]);
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# small run\nw = 30\ndelta = 2\nrestarts = 1\n").unwrap();
    let a = dir.path().join("a");
    ok(&["monitor", "--frame", p(&frame), "--config", p(&conf), "--w", "20", "--out", p(&a)]);
    let preds = read_predictions(fs::File::open(a.join("predictions.csv")).unwrap(), "p").unwrap();
    assert_eq!(preds.len(), 36 - 22);
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"window_w\": 20"));
    fs::write(&conf, "bogus = 1\n").unwrap();
    assert_eq!(code(&["monitor", "--frame", p(&frame), "--config", p(&conf), "--out", p(&a)]), 2);
}

#[test]
fn reduce_masks_alternate_and_step_one_is_rejected() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=46"]);
    let out = dir.path().join("r");
    ok(&["reduce", "--frame", p(&frame), "--w", "12", "--period", "4", "--step", "2", "--out", p(&out)]);
    let filled = load(&out.join("filled.csv"));
    let observed = filled.availability();
    assert!(observed[..13].iter().all(|&o| o));
    let tail: Vec<bool> = observed[13..].to_vec();
    let expected: Vec<bool> = (0..tail.len()).map(|i| (i / 4) % 2 == 1).collect();
    assert_eq!(tail, expected);
    let preds = read_predictions(fs::File::open(out.join("predictions.csv")).unwrap(), "p").unwrap();
    assert_eq!(preds.len(), observed.iter().filter(|&&o| !o).count());
    assert!(preds.iter().all(|r| r.imputed && r.observed.is_some()));
    assert_eq!(load(&out.join("filled.csv")).targets().iter().filter(|t| t.is_none()).count(), 0);
    assert_eq!(code(&["reduce", "--frame", p(&frame), "--w", "12", "--step", "1", "--out", p(&out)]), 2);
}

#[test]
fn time_baseline_ignores_covariates() {
    let dir = TempDir::new().unwrap();
    let frame_path = synth(dir.path(), "s", &["--set", "length=30"]);
    let frame = load(&frame_path);
    let n = frame.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| frame.covariates().row((i * 7 + 3) % n).to_vec()).collect();
    let permuted = frame.with_covariates(Mat::from_rows(&rows).unwrap()).unwrap();
    let perm_path = dir.path().join("perm.csv");
    save(&perm_path, &permuted);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["baseline", "--frame", p(&frame_path), "--mode", "time", "--w", "16", "--out", p(&a)]);
    ok(&["baseline", "--frame", p(&perm_path), "--mode", "time", "--w", "16", "--out", p(&b)]);
    assert_eq!(fs::read(a.join("predictions.csv")).unwrap(), fs::read(b.join("predictions.csv")).unwrap());
}

#[test]
fn single_feature_baseline_on_one_column_matches_monitor() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=30", "--set", "n_features=1", "--set", "n_signal=1"]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["baseline", "--frame", p(&frame), "--mode", "feature", "--column", "0", "--w", "16", "--out", p(&a)]);
    ok(&["monitor", "--frame", p(&frame), "--w", "16", "--out", p(&b)]);
    assert_eq!(fs::read(a.join("predictions.csv")).unwrap(), fs::read(b.join("predictions.csv")).unwrap());
    assert_eq!(code(&["baseline", "--frame", p(&frame), "--mode", "feature", "--out", p(&a)]), 2);
    assert_eq!(code(&["baseline", "--frame", p(&frame), "--mode", "feature", "--column", "4", "--out", p(&a)]), 2);
}

#[test]
fn synth_is_seeded_and_accepted_by_monitor() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "a", &["--seed", "9"]);
    let b = synth(dir.path(), "b", &["--seed", "9"]);
    let c = synth(dir.path(), "c", &["--seed", "10"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(load(&a).len(), 240);
    let spec = dir.path().join("spec");
    fs::write(&spec, "length = 26\nnoise_std = 0.2\n").unwrap();
    let short = dir.path().join("short");
    ok(&["synth", "--spec", p(&spec), "--out", p(&short)]);
    ok(&["monitor", "--frame", p(&short.join("frame.csv")), "--w", "24", "--out", p(&dir.path().join("m"))]);
    assert_eq!(code(&["synth", "--set", "phi=2", "--out", p(&short)]), 2);
    assert_eq!(code(&["synth", "--set", "colour=red", "--out", p(&short)]), 2);
}

#[test]
fn outputs_round_trip_through_the_parsers() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=30"]);
    let out = dir.path().join("m");
    ok(&["monitor", "--frame", p(&frame), "--w", "16", "--out", p(&out)]);
    let preds = read_predictions(fs::File::open(out.join("predictions.csv")).unwrap(), "p").unwrap();
    let mut buf = Vec::new();
    nowcast_core::io::write_predictions(&mut buf, &preds).unwrap();
    assert_eq!(buf, fs::read(out.join("predictions.csv")).unwrap());
    let plot = read_plot(fs::File::open(out.join("plot.csv")).unwrap(), "p").unwrap();
    let mut buf = Vec::new();
    nowcast_core::io::write_plot(&mut buf, &plot).unwrap();
    assert_eq!(buf, fs::read(out.join("plot.csv")).unwrap());
    let f = load(&frame);
    let mut buf = Vec::new();
    write_frame(&mut buf, &f).unwrap();
    assert_eq!(buf, fs::read(&frame).unwrap());
}

#[test]
fn thread_setting_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_nowcast"))
            .args(["synth", "--set", "length=10", "--out", p(&out)])
            .env("NOWCAST_THREADS", v)
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    assert_eq!(run("many").status.code(), Some(2));
    assert_eq!(code(&["--threads", "0", "synth", "--out", p(&out)]), 2);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let frame = synth(dir.path(), "s", &["--set", "length=30"]);
    let first = dir.path().join("r1");
    ok(&["reduce", "--frame", p(&frame), "--w", "12", "--period", "3", "--step", "3", "--out", p(&first)]);
    let second = dir.path().join("r2");
    ok(&["replay", "--manifest", p(&first.join("manifest.json")), "--out", p(&second)]);
    for f in ["filled.csv", "predictions.csv", "plot.csv", "metrics.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"tool\": \"other\"}").unwrap();
    assert_ne!(code(&["replay", "--manifest", p(&bad)]), 0);
}
