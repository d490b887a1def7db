use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resbridge::formats::{read_checkpoint, read_dataset};

const BIN: &str = env!("CARGO_BIN_EXE_resbridge");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("RESBRIDGE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// A config small enough that a whole train run takes well under a second.
fn small_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut v = serde_json::json!({
        "task": {"samples": 1000},
        "arch": {"anchor_hidden": [16], "velocity_hidden": [16]},
        "optimizer": {"total_steps": 60, "warmup_steps": 10},
        "train": {"batch_size": 32, "eval_every": 20},
    });
    merge(&mut v, extra);
    let p = dir.join("config.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn merge(a: &mut serde_json::Value, b: serde_json::Value) {
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

/// gen-data plus a full train run in `dir`.
fn trained(dir: &Path, extra: serde_json::Value) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = small_config(dir, extra);
    let data_dir = dir.join("data");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data_dir)]);
    let data = data_dir.join("dataset.rvb1");
    let run_dir = dir.join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir)]);
    (cfg, data, run_dir)
}

#[test]
fn gen_data_writes_default_dataset_with_valid_crc() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--out", s(tmp.path())]);
    let bin = tmp.path().join("dataset.rvb1");
    let ds = read_dataset(&bin).unwrap();
    assert_eq!(ds.len(), 20_000);
    let stats = json(&tmp.path().join("dataset_stats.json"));
    assert_eq!(stats["samples"], 20_000);
    assert!(tmp.path().join("dataset.rvb1.prov.json").exists());
    assert!(tmp.path().join("dataset.csv").exists());

    let mut bytes = std::fs::read(&bin).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = tmp.path().join("bad.rvb1");
    std::fs::write(&bad, &bytes).unwrap();
    let err = read_dataset(&bad).unwrap_err().to_string();
    assert!(err.contains("CRC"), "{err}");
    let o = run(&["train", "--data", s(&bad), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_data_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), serde_json::json!({}));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for d in [&a, &b] {
        ok(&["gen-data", "--config", s(&cfg), "--seed", "7", "--out", s(d)]);
    }
    ok(&["gen-data", "--config", s(&cfg), "--seed", "8", "--out", s(&c)]);
    for f in ["dataset.rvb1", "dataset.csv", "dataset_stats.json", "dataset.rvb1.prov.json", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.join("dataset.rvb1")).unwrap(),
        std::fs::read(c.join("dataset.rvb1")).unwrap()
    );
}

#[test]
fn invalid_inputs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), serde_json::json!({"task": {"jitter_freq": 16}}));
    let o = run(&["gen-data", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("jitter frequency out of band"), "{}", stderr(&o));

    let cfg = small_config(tmp.path(), serde_json::json!({"bridge": {"cutoff": 0}}));
    assert_eq!(code(&run(&["gen-data", "--config", s(&cfg), "--out", s(tmp.path())])), 2);

    let bad_key = small_config(tmp.path(), serde_json::json!({"optimizer": {"lr": 1.0}}));
    assert_eq!(code(&run(&["gen-data", "--config", s(&bad_key), "--out", s(tmp.path())])), 2);

    std::fs::write(tmp.path().join("junk.json"), "{\"nope\": 1}").unwrap();
    let junk = tmp.path().join("junk.json");
    assert_eq!(code(&run(&["gen-data", "--config", s(&junk), "--out", s(tmp.path())])), 2);

    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["train"])), 2);
    assert_eq!(
        code(&run(&["train", "--data", s(&tmp.path().join("missing.rvb1")), "--out", s(tmp.path())])),
        2
    );

    let o = Command::new(BIN)
        .args(["gen-data", "--out", s(tmp.path())])
        .env("RESBRIDGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), serde_json::json!({}));
    let out = tmp.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let before = std::fs::read(out.join("dataset.rvb1")).unwrap();
    let o = run(&["gen-data", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"));
    assert_eq!(std::fs::read(out.join("dataset.rvb1")).unwrap(), before);
    ok(&["gen-data", "--config", s(&cfg), "--seed", "3", "--out", s(&out), "--force"]);
    assert_ne!(std::fs::read(out.join("dataset.rvb1")).unwrap(), before);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data, full) = trained(tmp.path(), serde_json::json!({}));
    let part = tmp.path().join("part");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&part), "--until", "20"]);
    let ck = read_checkpoint(&part.join("model.rvbm")).unwrap();
    assert!(ck.train_state.is_some());
    let rows = std::fs::read_to_string(part.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);

    let ckpt = part.join("model.rvbm");
    let copy = tmp.path().join("resume_from.rvbm");
    std::fs::copy(&ckpt, &copy).unwrap();
    ok(&["train", "--data", s(&data), "--out", s(&part), "--resume", s(&copy)]);
    for f in ["metrics.csv", "model.rvbm"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(part.join(f)).unwrap(), "{f}");
    }

    // resuming under a different config is refused
    let other = small_config(tmp.path(), serde_json::json!({"seed": 99}));
    let o = run(&["train", "--config", s(&other), "--data", s(&data), "--out", s(&part), "--resume", s(&copy)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data, a) = trained(tmp.path(), serde_json::json!({}));
    let b = tmp.path().join("again");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&b)]);
    for f in ["metrics.csv", "metrics.csv.prov.json", "model.rvbm", "model.rvbm.prov.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    let steps: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["20", "40", "60"]);
}

#[test]
fn sample_splits_output_into_anchor_and_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, data, run_dir) = trained(tmp.path(), serde_json::json!({}));
    let model = run_dir.join("model.rvbm");
    let out = tmp.path().join("s");
    let o = run(&["sample", "--checkpoint", s(&model), "--data", s(&data), "--nfe", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    ok(&["sample", "--checkpoint", s(&model), "--data", s(&data), "--count", "5", "--nfe", "3", "--out", s(&out)]);
    let summary = json(&out.join("samples.json"));
    assert_eq!(summary["evaluations"], 3);
    assert_eq!(summary["samples"], 5);
    let csv = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    let mut n = 0;
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[3] + v[4] - v[5]).abs() <= 1e-12 * (1.0 + v[5].abs()), "{line}");
        n += 1;
    }
    assert_eq!(n, 5 * 16 * 2);

    let cond = "0.5,-0.25,0.1,0.2,0.3,0.4,0.5,0.6";
    let one = tmp.path().join("one");
    ok(&["sample", "--checkpoint", s(&model), "--condition", cond, "--out", s(&one)]);
    assert_eq!(json(&one.join("samples.json"))["evaluations"], 8);
    assert_eq!(code(&run(&["sample", "--checkpoint", s(&model), "--condition", "1,2", "--out", s(&one), "--force"])), 2);
}

#[test]
fn eval_agrees_with_oracle_and_training_log() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data, run_dir) = trained(tmp.path(), serde_json::json!({}));
    let o_dir = tmp.path().join("oracle");
    ok(&["eval", "--oracle", "--config", s(&cfg), "--data", s(&data), "--out", s(&o_dir)]);
    assert_eq!(json(&o_dir.join("eval.json"))["success_rate"], 1.0);
    ok(&["eval", "--oracle", "--config", s(&cfg), "--data", s(&data), "--tol", "0", "--out", s(&o_dir), "--force"]);
    let r = json(&o_dir.join("eval.json"));
    assert!(r["success_rate"].as_f64().unwrap() <= 0.01, "{r}");

    let e_dir = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", s(&run_dir.join("model.rvbm")), "--data", s(&data), "--out", s(&e_dir)]);
    let r = json(&e_dir.join("eval.json"));
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let last: Vec<f64> = metrics.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(r["success_rate"].as_f64().unwrap(), last[6]);
    assert_eq!(r["mean_endpoint_error"].as_f64().unwrap(), last[5]);
    assert_eq!(r["evaluations"], 8);
    assert_eq!(code(&run(&["eval", "--data", s(&data), "--out", s(&e_dir), "--force"])), 2);
    assert_eq!(
        code(&run(&["eval", "--checkpoint", s(&run_dir.join("model.rvbm")), "--data", s(&data), "--tol", "-1", "--out", s(&e_dir), "--force"])),
        2
    );
}

#[test]
fn regression_baseline_trains_and_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), serde_json::json!({}));
    let d = tmp.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&d)]);
    let data = d.join("dataset.rvb1");
    let r = tmp.path().join("r");
    ok(&["train", "--regression", "--config", s(&cfg), "--data", s(&data), "--out", s(&r)]);
    let out = tmp.path().join("s");
    ok(&["sample", "--checkpoint", s(&r.join("model.rvbm")), "--data", s(&data), "--count", "2", "--out", s(&out)]);
    assert_eq!(json(&out.join("samples.json"))["evaluations"], 0);
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        serde_json::json!({"optimizer": {"base_lr": 1e200, "clip_norm": 1e300, "warmup_steps": 0}}),
    );
    let d = tmp.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&d)]);
    let o = run(&["train", "--config", s(&cfg), "--data", s(&d.join("dataset.rvb1")), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn diagnose_quantization_writes_report_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("q");
    ok(&["diagnose", "--which", "quantization", "--out", s(&out)]);
    let dir = out.join("diagnostics").join("quantization");
    let r = json(&dir.join("report.json"));
    assert!(r["verdicts"].as_array().unwrap().iter().all(|v| v["passed"] == true), "{r}");
    assert!(r["provenance"]["config_hash"].as_str().unwrap().len() == 16);
    let mut svgs = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "svg") {
            let text = std::fs::read_to_string(&p).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap();
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            svgs += 1;
        }
    }
    assert!(svgs >= 1);
    assert_eq!(code(&run(&["diagnose", "--which", "quantization", "--out", s(&out)])), 2);
}

#[test]
fn diagnose_without_models_needs_auto() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), serde_json::json!({}));
    let out = tmp.path().join("d");
    let o = run(&["diagnose", "--which", "transport", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing checkpoint"), "{}", stderr(&o));
    ok(&["diagnose", "--which", "transport", "--auto", "--config", s(&cfg), "--out", s(&out)]);
    assert!(out.join("models").join("anchored.rvbm").exists());
    assert!(out.join("diagnostics").join("transport").join("report.json").exists());
}
