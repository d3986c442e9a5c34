//! End-to-end checks of the `nefl` binary: argument handling, exit codes,
//! and the files a run leaves behind.

use std::path::{Path, PathBuf};
use std::process::Command;

fn nefl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nefl"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const TINY_CONFIG: &str = r#"{
    "model": {
        "kind": "mlp",
        "stages": [{"blocks": 2, "width": 8}],
        "input_shape": [4],
        "num_classes": 3
    },
    "scaling": {"ratios": [0.5, 1.0]},
    "federation": {
        "rounds": 2, "clients": 4, "fraction": 1.0,
        "local_epochs": 1, "batch_size": 4, "lr0": 0.05, "seed": 3
    },
    "dataset": {
        "source": {"kind": "synthetic", "classes": 3, "per_class": 12,
                   "dim": 4, "margin": 5.0}
    }
}"#;

#[test]
fn validate_prints_the_family_and_exits_zero() {
    let out = nefl().arg("validate").arg(repo_config("smoke_iid.json")).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "validate failed: {}", stdout);
    assert!(stdout.contains("config ok"), "missing ok line:\n{}", stdout);
    assert!(stdout.contains("tier 5"), "missing tier table:\n{}", stdout);
    // five family rows, k = 1..5
    for k in 1..=5 {
        assert!(
            stdout.lines().any(|l| l.trim_start().starts_with(&format!("{} ", k))),
            "missing family row {}:\n{}",
            k,
            stdout
        );
    }
}

#[test]
fn run_writes_metrics_summary_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let out_dir = dir.path().join("out");

    let out = nefl().arg("run").arg(&cfg).arg("--out-dir").arg(&out_dir).output().unwrap();
    assert!(
        out.status.success(),
        "run failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );

    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("round,k,top1,loss,lr"));
    // 2 rounds x 2 submodels
    assert_eq!(lines.count(), 4, "unexpected metrics rows:\n{}", metrics);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rounds"], 2);
    assert_eq!(summary["submodels"].as_array().unwrap().len(), 2);
    assert!(summary["final_worst_top1"].is_number());

    let diag = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("k,block,step_size,mean_abs_weight"), "diagnostics:\n{}", diag);
}

#[test]
fn identical_seeds_reproduce_the_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();

    for pass in ["a", "b"] {
        let out = nefl()
            .arg("run")
            .arg(&cfg)
            .arg("--seed")
            .arg("9")
            .arg("--out-dir")
            .arg(dir.path().join(pass))
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b, "same seed must give identical metrics");
}

#[test]
fn config_errors_use_the_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // unknown field -> parse error -> exit 2
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"kind": "mlp", "stage": []}}"#).unwrap();
    let out = nefl().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown field should exit 2");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // structurally valid but semantically broken -> exit 2
    let broken = dir.path().join("broken.json");
    std::fs::write(
        &broken,
        TINY_CONFIG.replace("\"ratios\": [0.5, 1.0]", "\"ratios\": [0.5, 0.9]"),
    )
    .unwrap();
    let out = nefl().arg("validate").arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "bad ratios should exit 2");

    // missing file -> io error -> exit 5
    let out = nefl().arg("run").arg(dir.path().join("absent.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(5), "missing config should exit 5");
}

#[test]
fn oracle_check_passes_on_a_masked_family() {
    let out = nefl()
        .arg("oracle-check")
        .arg(repo_config("table_resnet18_wd.json"))
        .arg("--trials")
        .arg("5")
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "oracle check failed: {}", stdout);
    assert!(stdout.contains("max |nested avg - per-coordinate oracle|"), "{}", stdout);
}
