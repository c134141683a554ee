use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_peginsert"));
    c.env_remove("PEGINSERT_OUT").env_remove("PEGINSERT_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest_without_timestamp(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let ts = v.as_object_mut().unwrap().remove("timestamp").unwrap();
    assert!(ts.as_str().is_some_and(|s| !s.is_empty()));
    v.as_object_mut().unwrap().remove("argv");
    v
}

#[test]
fn pattern_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pattern", "--tolerance", "0.1", "--radius", "1.0", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("pattern.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("index,dx_mm,dy_mm"));
    assert!(csv.lines().count() > 7);
    let m = manifest_without_timestamp(dir.path());
    assert_eq!(m["subcommand"], "pattern");
}

#[test]
fn out_can_come_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["pattern"]).env("PEGINSERT_OUT", dir.path()).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("pattern.csv").exists());
}

#[test]
fn usage_errors_exit_two() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn domain_errors_exit_one_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pattern", "--tolerance=0", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[InvalidTolerance]"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[world]\ntolerance = 0.0\n").unwrap();
    let o = run(&["bench", "--config", p(&cfg), "--out", p(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[InvalidConfig]"), "{}", stderr(&o));

    fs::write(&cfg, "sede = 1\n").unwrap();
    let o = run(&["bench", "--config", p(&cfg), "--out", p(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[ConfigError]"), "{}", stderr(&o));
}

#[test]
fn simulate_is_seed_determined() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str, seed: &str| {
        let d = dir.path().join(name);
        let o = run(&["simulate", "--style", "DSUB", "--seed", seed, "--out", p(&d)]);
        assert!(o.status.success(), "{}", stderr(&o));
        d
    };
    let (a, b, c) = (out("a", "5"), out("b", "5"), out("c", "6"));
    for f in ["cam0.pgm", "cam1.pgm", "world.json", "outcome.json", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("world.json")).unwrap(), fs::read(c.join("world.json")).unwrap());
    assert_eq!(manifest_without_timestamp(&a), manifest_without_timestamp(&b));
}

#[test]
fn lifecycle_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 3\nstyles = [\"LED\"]\n[collection]\nn_insertions = 4\nsamples_per_insertion = 40\ntrain_insertions = 3\n",
    )
    .unwrap();
    let collect = dir.path().join("collect");
    let o = run(&["collect", "--config", p(&cfg), "--out", p(&collect)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(collect.join("dataset/LED/meta.json").exists());

    let trained = dir.path().join("train");
    let o = run(&["train", "--config", p(&cfg), "--dataset", p(&collect.join("dataset")), "--out", p(&trained)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&fs::read_to_string(trained.join("reports/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["styles"][0]["models"].as_array().unwrap().len(), 2);

    let eval = dir.path().join("eval");
    let o = run(&[
        "evaluate",
        "--model",
        p(&trained.join("models/LED/cam1")),
        "--dataset",
        p(&collect.join("dataset/LED")),
        "--val-only",
        "--out",
        p(&eval),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    let reported = summary["styles"][0]["models"][1]["metrics"]["mae"].as_f64().unwrap();
    // Weights are stored as f32, so the reloaded model differs slightly.
    assert!((metrics["mae"].as_f64().unwrap() - reported).abs() <= 1e-4 * reported.max(1e-3));

    let servo = dir.path().join("servo");
    let o = run(&[
        "servo",
        "--config",
        p(&cfg),
        "--style",
        "LED",
        "--models",
        p(&trained.join("models")),
        "--trace",
        "--out",
        p(&servo),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: Value = serde_json::from_str(&fs::read_to_string(servo.join("servo.json")).unwrap()).unwrap();
    assert_eq!(s["residuals_mm"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(servo.join("trace.csv")).unwrap().lines().count(), 1 + 3 * 2);
}

#[test]
fn bench_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    fs::write(&cfg, "styles = [\"PH\", \"C1\"]\n[bench]\ninsertions_per_style_per_mode = 3\n").unwrap();
    let a = dir.path().join("a");
    let o = run(&["bench", "--config", p(&cfg), "--seed", "2", "--trace", "--jobs", "1", "--out", p(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = dir.path().join("b");
    let o = bin()
        .args(["bench", "--config", p(&cfg), "--seed", "2", "--trace", "--out", p(&b)])
        .env("PEGINSERT_JOBS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["table.csv", "scatter.csv", "summary.json", "scatter.svg", "bench.json", "trace.csv", "configure.json"] {
        assert_eq!(fs::read(a.join("reports").join(f)).unwrap(), fs::read(b.join("reports").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(b.join("config.toml")).unwrap());
    assert_eq!(manifest_without_timestamp(&a), manifest_without_timestamp(&b));
    let scatter = fs::read_to_string(a.join("reports/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 2 * 2 * 3);
    assert_eq!(fs::read_to_string(a.join("reports/trace.csv")).unwrap().lines().count(), 1 + 2 * 3 * 3);

    // Reuse the saved models with spiral-only and servo modes.
    let c = dir.path().join("c");
    let o = run(&["bench", "--config", p(&cfg), "--seed", "2", "--models", p(&a.join("models")), "--modes", "vs,novs", "--out", p(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!c.join("models").exists());

    let r = dir.path().join("r");
    let o = run(&["report", "--input", p(&a.join("reports/bench.json")), "--out", p(&r)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["table.csv", "scatter.csv", "summary.json", "scatter.svg"] {
        assert_eq!(fs::read(a.join("reports").join(f)).unwrap(), fs::read(r.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bench_spiral_only_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    fs::write(&cfg, "styles = [\"C2\"]\n[bench]\ninsertions_per_style_per_mode = 4\n").unwrap();
    let o = run(&["bench", "--config", p(&cfg), "--modes", "novs", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scatter = fs::read_to_string(dir.path().join("reports/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 5);
    assert!(scatter.lines().skip(1).all(|l| l.contains(",novs,")));
    assert!(!dir.path().join("models").exists());
}
