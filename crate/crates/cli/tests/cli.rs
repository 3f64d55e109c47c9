use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/golden").join(name)
}

fn malformed(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/malformed").join(name)
}

fn geognn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geognn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn geognn")
}

fn ok(args: &[&str]) -> String {
    let out = geognn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const WATER_PERMUTED: &str = "water-permuted
  handmade

  3  2  0  0  0  0  0  0  0  0999 V2000
   -0.2400    0.9266    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0
    0.9572    0.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
  2  3  1  0
  1  2  1  0
M  END
$$$$
";

/// Synthetic corpus with splits, a pretraining checkpoint and a finetuned one.
struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new() -> Pipeline {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data.sdf");
        ok(&[
            "synth", "--file", s(&data), "--count", "30", "--fingerprint-bits", "4",
            "--valid-frac", "0.2", "--test-frac", "0.2", "--seed", "3",
        ]);
        let pre = dir.path().join("pre");
        ok(&["pretrain", "--input", s(&data), "--out", s(&pre), "--epochs", "2", "--batch", "8", "--seed", "1"]);
        let ft = dir.path().join("ft");
        ok(&[
            "finetune", "--input", s(&data), "--out", s(&ft), "--checkpoint", s(&pre.join("pretrain.gem")),
            "--epochs", "3", "--labels", "y", "--seed", "2",
        ]);
        Pipeline { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert!(ok(&["--help"]).contains("pretrain"));
    assert!(ok(&["finetune", "--help"]).contains("--labels"));
    ok(&["--version"]);
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(code(&geognn(&["pretrain", "--bogus"])), 1);
    assert_eq!(code(&geognn(&[])), 1);
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.sdf");
    let out = geognn(&["featurize", "--input", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    let out = geognn(&["featurize", "--input", s(&golden("water.sdf"))]);
    assert_eq!(code(&out), 1, "missing --out");
}

#[test]
fn featurize_water_counts_bonds_and_angles() {
    let dir = TempDir::new().unwrap();
    ok(&["featurize", "--input", s(&golden("water.sdf")), "--out", s(dir.path())]);
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["molecules"], 1);
    assert_eq!(summary["atoms"], 3);
    assert_eq!(summary["bonds"], 2);
    assert_eq!(summary["angles"], 1);
    let encoded = std::fs::read_to_string(dir.path().join("encoded.jsonl")).unwrap();
    let record: Value = serde_json::from_str(encoded.lines().next().unwrap()).unwrap();
    assert_eq!(record["bonds"].as_array().unwrap().len(), 2);
    assert_eq!(record["angles"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("layout.json").is_file());
}

#[test]
fn empty_input_gives_empty_bundle() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.sdf");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("out");
    ok(&["featurize", "--input", s(&empty), "--out", s(&out)]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["molecules"], 0);
    assert_eq!(summary["bonds"], 0);
    assert_eq!(std::fs::read_to_string(out.join("encoded.jsonl")).unwrap(), "");
}

#[test]
fn strict_mode_reports_line_number() {
    let dir = TempDir::new().unwrap();
    let bad = malformed("bad_coordinate.sdf");
    let out = geognn(&["featurize", "--strict", "--input", s(&bad), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 6"), "{err}");
    assert!(err.contains("record 1"), "{err}");

    // Lenient mode skips the record and records it in the summary.
    ok(&["featurize", "--input", s(&bad), "--out", s(dir.path())]);
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["molecules"], 0);
    assert_eq!(summary["rejected"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"epochs": 2, "learning_rate": 0.1}"#).unwrap();
    let out = geognn(&[
        "featurize", "--config", s(&config), "--input", s(&golden("water.sdf")), "--out", s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn pipeline_evaluate_matches_finetune_report() {
    let p = Pipeline::new();
    let data = p.path("data.sdf");
    let best = p.path("ft/finetune_best.gem");
    let report = json(&p.path("ft/finetune_report.json"));
    let stdout = ok(&["evaluate", "--input", s(&data), "--checkpoint", s(&best), "--split", "test"]);
    let evaluated: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(evaluated["metric"], "rmse");
    assert_eq!(evaluated["value"].as_f64(), report["test_metric"].as_f64());

    // A classification metric on a regression checkpoint.
    let out = geognn(&["evaluate", "--input", s(&data), "--checkpoint", s(&best), "--metric", "rocauc"]);
    assert_eq!(code(&out), 1);

    // Evaluating a pretraining checkpoint has no downstream head.
    let out = geognn(&["evaluate", "--input", s(&data), "--checkpoint", s(&p.path("pre/pretrain.gem"))]);
    assert_ne!(code(&out), 0);

    // Checkpoints refuse inputs featurized with another layout.
    let config = p.path("narrow.json");
    std::fs::write(&config, r#"{"features": {"length_centers": [0.0, 1.0, 2.0]}}"#).unwrap();
    let out = geognn(&[
        "evaluate", "--config", s(&config), "--input", s(&data), "--checkpoint", s(&best),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("layout"));
}

#[test]
fn resumed_pretraining_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.sdf");
    ok(&["synth", "--file", s(&data), "--count", "12", "--fingerprint-bits", "4", "--seed", "9"]);
    let full = dir.path().join("full");
    ok(&["pretrain", "--input", s(&data), "--out", s(&full), "--epochs", "3", "--batch", "4", "--seed", "5"]);
    let part = dir.path().join("part");
    ok(&["pretrain", "--input", s(&data), "--out", s(&part), "--epochs", "1", "--batch", "4", "--seed", "5"]);
    let resumed = dir.path().join("resumed");
    ok(&[
        "pretrain", "--input", s(&data), "--out", s(&resumed), "--epochs", "3", "--batch", "4",
        "--checkpoint", s(&part.join("pretrain.gem")),
    ]);
    let a = std::fs::read(full.join("pretrain.gem")).unwrap();
    let b = std::fs::read(resumed.join("pretrain.gem")).unwrap();
    assert!(a == b, "checkpoints differ after resume");
}

#[test]
fn embedding_ignores_atom_order() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.sdf");
    ok(&["synth", "--file", s(&data), "--count", "6", "--fingerprint-bits", "2", "--seed", "4"]);
    let pre = dir.path().join("pre");
    ok(&["pretrain", "--input", s(&data), "--out", s(&pre), "--epochs", "1", "--seed", "1"]);
    let permuted = dir.path().join("permuted.sdf");
    std::fs::write(&permuted, WATER_PERMUTED).unwrap();
    let emb = dir.path().join("emb");
    ok(&[
        "embed", "--input", s(&golden("water.sdf")), s(&permuted), "--out", s(&emb),
        "--checkpoint", s(&pre.join("pretrain.gem")),
    ]);
    let text = std::fs::read_to_string(emb.join("embeddings.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["h_G"], rows[1]["h_G"]);
    assert!(!rows[0]["h_G"].as_array().unwrap().is_empty());
}
