use std::path::Path;
use std::process::Command;

const TINY: &str = r#"{
  "model": {"n_layers": 2, "d_model": 16, "d_ff": 32, "n_heads": 2, "max_seq_len": 32, "rmu_layer": 1},
  "data": {"n_entities": 15, "forget_ratio": 0.15, "pretrain_texts": 0},
  "training": {
    "retain": {"epochs": 3}, "inject": {"epochs": 6},
    "unlearn": {"epochs": 3}, "distill": {"epochs": 3}
  },
  "objectives": ["npo"],
  "stats_rounds": 100
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unlearn-lab"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("spec.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn controlled_writes_report_summary_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let res = bin()
        .args(["controlled", "--seed", "0,1,2", "--jobs", "1", "--no-lr-search", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.ends_with("report.json")));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "controlled");
    assert_eq!(report["seeds"], serde_json::json!([0, 1, 2]));
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);
    assert_eq!(report["lr_search"][0]["source"], "default");
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(std::fs::read_dir(out.join("curves")).unwrap().count(), 6);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seeds": [0, 1, 2], "learning_rate": 0.1}"#);
    let res = bin().args(["controlled", "--config"]).arg(&cfg).output().unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rate"));
}

#[test]
fn mismatched_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"kind": "revisit"}"#);
    let res = bin().args(["l2", "--config"]).arg(&cfg).output().unwrap();
    assert!(!res.status.success());
}

#[test]
fn too_few_seeds_are_rejected() {
    let res = bin().args(["controlled", "--seed", "0,1"]).output().unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("3 seeds"));
}
