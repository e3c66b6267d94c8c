use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hetcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = hetcd(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small seeded pair into `dir`.
fn small_pair(dir: &Path, seed: u64) {
    let cfg = dir.join("synth.toml");
    fs::write(
        &cfg,
        format!("height = 40\nwidth = 40\nrng_seed = {seed}\nnum_change_regions = 2\nchange_area_fraction = 0.1\n"),
    )
    .unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(dir)]);
}

#[test]
fn run_writes_complete_report() {
    let dir = tempfile::tempdir().unwrap();
    small_pair(dir.path(), 4);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        r#"m = 300
rng_seed = 9

[paths]
x = "x.npy"
y = "y.npy"
ground_truth = "mask.npy"
output_dir = "out"

[patch]
k = 5
delta = 1

[regressor]
kind = "rfr"

[regressor.rfr]
num_trees = 16

[filter]
spatial_radius = 4
"#,
    )
    .unwrap();
    ok(&["run", "--config", p(&cfg)]);

    let out = dir.path().join("out");
    for name in ["pc.npy", "train.bin", "xhat.npy", "yhat.npy", "dx.npy", "dy.npy", "fused.npy", "d.npy", "map.png"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for key in ["prior", "selection", "regression", "detection", "total"] {
        assert!(report["stage_timings_ms"][key].is_number(), "stage_timings_ms.{key}");
    }
    for key in ["d_h_x", "d_h_y", "fn_fraction"] {
        assert!(report["selection"][key].is_number(), "selection.{key}");
    }
    for key in ["threshold", "auc", "oa", "kappa"] {
        assert!(report["detection"][key].is_number(), "detection.{key}");
    }
    let counts: Vec<u64> = ["tp", "tn", "fp", "fn"]
        .iter()
        .map(|k| report["detection"][k].as_u64().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<u64>(), 1600);
}

#[test]
fn stages_chain_and_repeat_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pair(d, 2);
    let (x, y, mask) = (d.join("x.npy"), d.join("y.npy"), d.join("mask.npy"));
    let run_stages = |tag: &str| {
        let f = |name: &str| d.join(format!("{tag}_{name}"));
        ok(&["prior", "--x", p(&x), "--y", p(&y), "--k", "5", "--out", p(&f("pc.npy"))]);
        ok(&[
            "select", "--pc", p(&f("pc.npy")), "--x", p(&x), "--y", p(&y), "--m", "200", "--out",
            p(&f("train.bin")), "--report", p(&f("sel.json")), "--mask", p(&mask),
        ]);
        ok(&[
            "regress", "--train", p(&f("train.bin")), "--x", p(&x), "--y", p(&y), "--method", "rfr", "--trees",
            "8", "--seed", "3", "--out-xhat", p(&f("xhat.npy")), "--out-yhat", p(&f("yhat.npy")), "--model-dir",
            p(&f("models")),
        ]);
        ok(&[
            "detect", "--x", p(&x), "--y", p(&y), "--xhat", p(&f("xhat.npy")), "--yhat", p(&f("yhat.npy")),
            "--radius", "3", "--out-d", p(&f("d.npy")), "--out-map", p(&f("map.png")),
        ]);
        ok(&[
            "evaluate", "--scores", p(&f("d.npy")), "--map", p(&f("map.png")), "--mask", p(&mask), "--out",
            p(&f("metrics.json")),
        ]);
    };
    run_stages("a");
    run_stages("b");
    for name in ["pc.npy", "train.bin", "sel.json", "xhat.npy", "yhat.npy", "d.npy", "map.png", "metrics.json"] {
        let a = fs::read(d.join(format!("a_{name}"))).unwrap();
        let b = fs::read(d.join(format!("b_{name}"))).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    assert!(d.join("a_models/x_to_y.model").is_file());
    let metrics: Value = serde_json::from_str(&fs::read_to_string(d.join("a_metrics.json")).unwrap()).unwrap();
    assert!(metrics["auc"].as_f64().unwrap() > 0.5);
    let sel: Value = serde_json::from_str(&fs::read_to_string(d.join("a_sel.json")).unwrap()).unwrap();
    assert_eq!(sel["m"], 200);
}

#[test]
fn prior_rejects_oversized_patch() {
    let dir = tempfile::tempdir().unwrap();
    small_pair(dir.path(), 1);
    let x = dir.path().join("x.npy");
    let y = dir.path().join("y.npy");
    let out = hetcd(&["prior", "--x", p(&x), "--y", p(&y), "--k", "41", "--out", p(&dir.path().join("pc.npy"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("patch larger than image"));
}

#[test]
fn evaluate_rejects_mismatched_mask() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pair(d, 1);
    let other = d.join("other");
    fs::create_dir(&other).unwrap();
    fs::write(other.join("synth.toml"), "height = 30\nwidth = 40\n").unwrap();
    ok(&["synth", "--config", p(&other.join("synth.toml")), "--out", p(&other)]);
    let (x, y) = (d.join("x.npy"), d.join("y.npy"));
    ok(&["prior", "--x", p(&x), "--y", p(&y), "--k", "5", "--out", p(&d.join("pc.npy"))]);
    ok(&["select", "--pc", p(&d.join("pc.npy")), "--x", p(&x), "--y", p(&y), "--m", "200", "--out", p(&d.join("t.bin"))]);
    ok(&[
        "regress", "--train", p(&d.join("t.bin")), "--x", p(&x), "--y", p(&y), "--method", "hpt", "--out-xhat",
        p(&d.join("xh.npy")), "--out-yhat", p(&d.join("yh.npy")),
    ]);
    ok(&[
        "detect", "--x", p(&x), "--y", p(&y), "--xhat", p(&d.join("xh.npy")), "--yhat", p(&d.join("yh.npy")),
        "--radius", "3", "--out-d", p(&d.join("d.npy")), "--out-map", p(&d.join("map.png")),
    ]);
    let out = hetcd(&[
        "evaluate", "--map", p(&d.join("map.png")), "--mask", p(&other.join("mask.npy")), "--out",
        p(&d.join("m.json")),
    ]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    assert!(!d.join("m.json").exists());
}

#[test]
fn missing_input_and_bad_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.npy");
    let out = hetcd(&["prior", "--x", p(&missing), "--y", p(&missing), "--out", p(&dir.path().join("pc.npy"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.npy"));
    let out = hetcd(&["regress", "--method", "lasso"]);
    assert!(!out.status.success());
}
