use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "\
# a quick run
dataset.num_classes = 4
dataset.clips_per_class = 20
visual.epochs = 4
train.epochs = 3
eval.classifier_steps = 40
";

fn xma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xma"))
        .args(args)
        .env_remove("XMA_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = xma(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str(line).expect("error is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    dir: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// synth-data, pretrain-visual, train-audio and evaluate with `config`.
fn pipeline(dir: &Path, config: &str, seed: &str) -> Run {
    let run = Run { dir: dir.to_path_buf() };
    let cfg = run.path("run.cfg");
    std::fs::write(&cfg, config).unwrap();
    let (cfg, d, v, a, r) = (
        s(&cfg).to_string(),
        run.path("data.xmav"),
        run.path("visual.xmap"),
        run.path("audio.xmap"),
        run.path("report.json"),
    );
    let common = ["--config", &cfg, "--seed", seed, "--quiet"];
    fn with<'a>(common: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
        [common, rest].concat()
    }
    ok(&with(&common, &["synth-data", "--out", s(&d)]));
    ok(&with(&common, &["pretrain-visual", "--dataset", s(&d), "--out", s(&v)]));
    ok(&with(&common, &["train-audio", "--dataset", s(&d), "--visual", s(&v), "--out", s(&a)]));
    ok(&with(&common, &["evaluate", "--dataset", s(&d), "--visual", s(&v), "--audio", s(&a), "--out", s(&r)]));
    run
}

fn bytes(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r1 = pipeline(t1.path(), SMALL, "5");
    let r2 = pipeline(t2.path(), SMALL, "5");
    for f in ["data.xmav", "visual.xmap", "audio.xmap", "report.json", "report.per_class.csv", "audio.report.json", "visual.report.json"] {
        assert_eq!(bytes(r1.path(f)), bytes(r2.path(f)), "{f}");
    }
    let report: Value = serde_json::from_slice(&bytes(r1.path("report.json"))).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["seed"], 5);
    let rows = report["eval"]["baselines"].as_array().unwrap();
    let kinds: Vec<&str> = rows.iter().map(|r| r["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["GENERATED_FROM_AUDIO", "RETRIEVAL_BASELINE", "UPPER_BOUND_FRAMES"]);
    let log: Value = serde_json::from_slice(&bytes(r1.path("audio.report.json"))).unwrap();
    for e in log["training_log"]["epochs"].as_array().unwrap() {
        assert_eq!(e["wall_ms"], 0.0);
    }
}

#[test]
fn config_echo_reproduces_the_report() {
    let t1 = tempfile::tempdir().unwrap();
    let r1 = pipeline(t1.path(), SMALL, "3");
    let report: Value = serde_json::from_slice(&bytes(r1.path("report.json"))).unwrap();
    let echo = report["config_echo"].as_str().unwrap();
    let t2 = tempfile::tempdir().unwrap();
    let r2 = pipeline(t2.path(), echo, "3");
    assert_eq!(bytes(r1.path("report.json")), bytes(r2.path("report.json")));
}

#[test]
fn different_seed_changes_the_dataset() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a.xmav"), t.path().join("b.xmav"));
    ok(&["synth-data", "--seed", "1", "--out", s(&a), "--quiet"]);
    ok(&["synth-data", "--seed", "2", "--out", s(&b), "--quiet"]);
    assert_ne!(bytes(a), bytes(b));
}

#[test]
fn missing_checkpoint_exits_3_naming_the_path() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d.xmav");
    ok(&["synth-data", "--out", s(&d), "--quiet"]);
    let missing = t.path().join("absent.xmap");
    let out = xma(&[
        "evaluate", "--dataset", s(&d), "--visual", s(&missing), "--audio", s(&missing), "--out",
        s(&t.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "io");
    assert_eq!(err["error"]["path"], s(&missing));
}

#[test]
fn corrupted_dataset_exits_3() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d.xmav");
    ok(&["synth-data", "--out", s(&d), "--quiet"]);
    let mut raw = bytes(d.clone());
    raw[0] = b'Z';
    std::fs::write(&d, raw).unwrap();
    let out = xma(&["select-pairs", "--dataset", s(&d), "--out", s(&t.path().join("m.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("bad magic"));
}

#[test]
fn config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.cfg");
    std::fs::write(&cfg, "train.warp_factor = 9\n").unwrap();
    let out = xma(&["--config", s(&cfg), "synth-data", "--out", s(&t.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("train.warp_factor"));

    let out = xma(&["synth-data"]);
    assert_eq!(out.status.code(), Some(2));
    let out = xma(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_xma"))
        .args(["synth-data", "--out", s(&t.path().join("d"))])
        .env("XMA_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_4() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.cfg");
    std::fs::write(&cfg, format!("{SMALL}train.lr = 1e300\n")).unwrap();
    let (d, v) = (t.path().join("d.xmav"), t.path().join("v.xmap"));
    ok(&["--config", s(&cfg), "synth-data", "--out", s(&d), "--quiet"]);
    ok(&["--config", s(&cfg), "pretrain-visual", "--dataset", s(&d), "--out", s(&v), "--quiet"]);
    let out = xma(&[
        "--config", s(&cfg), "train-audio", "--dataset", s(&d), "--visual", s(&v), "--out",
        s(&t.path().join("a.xmap")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["kind"], "numeric");
}

#[test]
fn select_pairs_gap_report_and_manipulate_write_their_files() {
    let t = tempfile::tempdir().unwrap();
    let run = pipeline(t.path(), SMALL, "1");
    let (d, v, a) = (run.path("data.xmav"), run.path("visual.xmap"), run.path("audio.xmap"));

    let m = run.path("pairs.csv");
    ok(&["select-pairs", "--dataset", s(&d), "--mode", "MID_FRAME", "--out", s(&m), "--quiet"]);
    let manifest = String::from_utf8(bytes(m)).unwrap();
    assert_eq!(manifest.lines().count(), 4 * 20 + 1);
    let bad_mode = xma(&["select-pairs", "--dataset", s(&d), "--mode", "RANDOM", "--out", s(&run.path("x.csv"))]);
    assert_eq!(bad_mode.status.code(), Some(2));

    let g = run.path("gap.json");
    ok(&["--config", s(&run.path("run.cfg")), "gap-report", "--dataset", s(&d), "--visual", s(&v), "--audio", s(&a), "--out", s(&g), "--quiet"]);
    let gap: Value = serde_json::from_slice(&bytes(g)).unwrap();
    assert!(gap["gap"]["magnitude_mean"].as_f64().unwrap() >= 0.0);
    let csv = String::from_utf8(bytes(run.path("gap.projection.csv"))).unwrap();
    assert!(csv.starts_with("modality,class,x,y\n"));

    let spec = run.path("manip.cfg");
    std::fs::write(&spec, "clips = 3\ngain = 0.5\ninversion_steps = 10\n").unwrap();
    let mj = run.path("manip.json");
    ok(&[
        "--config", s(&run.path("run.cfg")), "manipulate", "--dataset", s(&d), "--visual", s(&v), "--audio", s(&a),
        "--spec", s(&spec), "--out", s(&mj), "--quiet",
    ]);
    let rep: Value = serde_json::from_slice(&bytes(mj)).unwrap();
    assert_eq!(rep["rows"].as_array().unwrap().len(), 4);
    assert_eq!(rep["rows"][0]["params"][0], 0.5);
    let sal = String::from_utf8(bytes(run.path("manip.saliency.csv"))).unwrap();
    assert_eq!(sal.lines().count(), 3 * 20 + 1);
}

#[test]
fn ablation_grid_writes_every_cell() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.cfg");
    std::fs::write(&cfg, "dataset.num_classes = 3\ndataset.clips_per_class = 20\nvisual.epochs = 2\ntrain.epochs = 1\n").unwrap();
    let out = t.path().join("grid");
    ok(&["--config", s(&cfg), "ablation-grid", "--out", s(&out), "--quiet"]);
    let csv = String::from_utf8(bytes(out.join("ablation.csv"))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("loss_variant,pair_source,duration,class_r1,class_r5,instance_r1,best_epoch"));
    assert_eq!(lines.count(), 3 * 2 * 3);
    let doc: Value = serde_json::from_slice(&bytes(out.join("ablation.json"))).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 18);
}
