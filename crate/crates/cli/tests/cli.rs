use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const NODES: usize = 4;

fn esgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esgcn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_series(path: &Path, nodes: usize) {
    let mut s = String::new();
    for t in 0..240 {
        let row: Vec<String> = (0..nodes)
            .map(|n| {
                let phase = t as f64 * std::f64::consts::TAU / 24.0 + n as f64;
                format!("{:.3}", 100.0 + 40.0 * phase.sin() + 5.0 * n as f64)
            })
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn config_json(data: &Path) -> String {
    serde_json::json!({
        "data": {"path": data},
        "model": {"channels": [8, 8, 8, 8], "head_hidden": 8},
        "train": {"epochs": 2, "batch_size": 32}
    })
    .to_string()
}

/// One small trained run shared by the tests that need a checkpoint.
fn trained() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        write_series(&f.path("flow.csv"), NODES);
        fs::write(f.path("config.json"), config_json(&f.path("flow.csv"))).unwrap();
        let out = esgcn(&["train", "--config", &f.arg("config.json"), "--seed", "7", "--out", &f.arg("run")]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        f
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn train_writes_log_checkpoint_and_metrics() {
    let f = trained();
    let run = f.path("run");
    assert!(run.join("checkpoint.bin").is_file());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
    let m = read_json(&run.join("metrics.json"));
    assert_eq!(m["nodes"], NODES);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["test"]["per_horizon"].as_array().unwrap().len(), 12);
    assert!(m["persistence_test"]["overall"]["mae"].as_f64().unwrap() >= 0.0);
}

#[test]
fn same_seed_reproduces_training_log() {
    let f = trained();
    let out = esgcn(&["train", "--config", &f.arg("config.json"), "--seed", "7", "--out", &f.arg("again")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(f.path("run/train_log.csv")).unwrap(),
        fs::read(f.path("again/train_log.csv")).unwrap()
    );
}

#[test]
fn eval_reproduces_test_metrics() {
    let f = trained();
    let out = esgcn(&["eval", "--checkpoint", &f.arg("run/checkpoint.bin"), "--out", &f.arg("eval")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let train = read_json(&f.path("run/metrics.json"));
    let eval = read_json(&f.path("eval/metrics.json"));
    assert_eq!(train["test"], eval["test"]);
    assert_eq!(train["best_epoch"], eval["checkpoint_epoch"]);
}

#[test]
fn predict_emits_one_row_per_horizon_step() {
    let f = trained();
    let out = esgcn(&["predict", "--checkpoint", &f.arg("run/checkpoint.bin"), "--window", "3", "--out", &f.arg("pred")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_matrix(&f.path("pred/forecast.csv"));
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.len() == NODES && r.iter().all(|v| v.is_finite())));
}

#[test]
fn exported_adjacency_pair_is_disjoint_and_bounded() {
    let f = trained();
    let ckpt = f.arg("run/checkpoint.bin");
    let dir = f.arg("aam");
    assert_eq!(code(&esgcn(&["export-aam", "--checkpoint", &ckpt, "--out", &dir])), 0);
    assert_eq!(code(&esgcn(&["export-aam", "--checkpoint", &ckpt, "--out", &dir, "--reversed"])), 0);
    let a = read_matrix(&f.path("aam/aam.csv"));
    let ar = read_matrix(&f.path("aam/aam_reversed.csv"));
    assert_eq!(a.len(), NODES);
    for (ra, rr) in a.iter().zip(&ar) {
        assert_eq!(ra.len(), NODES);
        for (&x, &y) in ra.iter().zip(rr) {
            assert!((0.0..1.0).contains(&x) && (0.0..1.0).contains(&y));
            assert_eq!(x * y, 0.0);
        }
    }
}

#[test]
fn window_past_the_end_is_an_input_error() {
    let f = trained();
    let out = esgcn(&["predict", "--checkpoint", &f.arg("run/checkpoint.bin"), "--window", "100000"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn node_count_mismatch_is_an_input_error() {
    let f = trained();
    let other = f.path("wide.csv");
    write_series(&other, NODES + 1);
    let out = esgcn(&["eval", "--checkpoint", &f.arg("run/checkpoint.bin"), "--data", &other.to_string_lossy()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn missing_data_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let out = esgcn(&["train", "--data", &missing.to_string_lossy(), "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"model": {"chanels": [8, 8, 8, 8]}}"#).unwrap();
    let out = esgcn(&["config", "--config", &cfg.to_string_lossy()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("model"), "{}", stderr(&out));
}

#[test]
fn unknown_ablation_preset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flow.csv");
    write_series(&data, NODES);
    let out = esgcn(&["ablate", "--data", &data.to_string_lossy(), "--preset", "everything"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_exits_with_corruption_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, b"NOTACHECKPOINT").unwrap();
    let out = esgcn(&["eval", "--checkpoint", &bad.to_string_lossy()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn gradcheck_flags_a_wrong_backward_rule() {
    let out = esgcn(&["gradcheck", "--inject-fault", "--filter", "fault", "--points", "2"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn gradcheck_reports_each_case_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = esgcn(&["gradcheck", "--points", "2", "--filter", "conv", "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("gradcheck.json"));
    let names: Vec<&str> = report["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(!names.is_empty());
    let mut unique = names.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in names {
        assert_eq!(stdout.lines().filter(|l| l.split_whitespace().next() == Some(name)).count(), 1, "{name}");
    }
}

#[test]
fn gradcheck_filter_matching_nothing_is_an_input_error() {
    let out = esgcn(&["gradcheck", "--filter", "no-such-op"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn dumped_defaults_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = esgcn(&["config", "--dump-defaults"]);
    assert_eq!(code(&out), 0);
    let path = dir.path().join("defaults.json");
    fs::write(&path, &out.stdout).unwrap();
    let again = esgcn(&["config", "--config", &path.to_string_lossy()]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    let a: Value = serde_json::from_slice(&out.stdout).unwrap();
    let b: Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(a, b);
    assert_eq!(a["model"]["lambda"], 0.1);
}
