//! End-to-end tests of the `lls` binary: exit codes, artifact layout,
//! determinism, scan/run consistency, and recheck-without-recompute.

use std::path::Path;
use std::process::{Command, Output};

fn lls(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lls"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const MINIMAL: &str = r#"
t = 0.0
[lattice]
d = 1
n = 2
[model]
kind = "harmonic_phi4"
n_s = 2
[output]
directory = "out"
"#;

const SMALL_COUPLED: &str = r#"
t = 0.02
seed = 11
[lattice]
d = 1
n = 2
[model]
kind = "harmonic_phi4"
n_s = 3
[output]
directory = "out"
keep_tables = true
"#;

#[test]
fn minimal_run_exits_zero_with_one_step_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = lls(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let steps = std::fs::read_to_string(tmp.path().join("out/steps.jsonl")).unwrap();
    let lines: Vec<&str> = steps.lines().collect();
    assert_eq!(lines.len(), 1);
    let record: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(record["schema_version"], 1);
    assert!(record["gap"].as_f64().unwrap() >= 0.5);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["verification"]["passed"], true);
    for csv in ["summary.csv", "gap_vs_step.csv", "norm_vs_circumference.csv"] {
        assert!(tmp.path().join("out").join(csv).exists(), "missing {csv}");
    }
}

#[test]
fn invalid_side_length_exits_two_with_pointed_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &MINIMAL.replace("n = 2", "n = 1"));
    let out = lls(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("side length"), "stderr: {msg}");
}

#[test]
fn missing_config_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lls(&["run", "--config", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn geometry_counts_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lls(&["geometry", "--d", "2", "--l", "3", "--shapes"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "4");
}

#[test]
fn dumped_schema_is_a_runnable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lls(&["dump-config-schema"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let schema = String::from_utf8_lossy(&out.stdout);
    assert!(schema.contains("[lattice]") && schema.contains("max_dimension"));
    // The schema text itself parses as a config.
    let cfg = write_config(tmp.path(), "schema.toml", &schema);
    let parsed = lls(&["geometry", "--d", "1", "--l", "1", "--shapes"], tmp.path());
    assert_eq!(parsed.status.code(), Some(0));
    assert!(std::fs::read_to_string(cfg).unwrap().contains("[model]"));
}

#[test]
fn identical_config_and_seed_give_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_COUPLED);
    for dir in ["a", "b"] {
        let out = lls(&["run", "--config", &cfg, "--out", dir], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["steps.jsonl", "verification.json", "tables.json", "config.json"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn different_seed_changes_only_the_randomized_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_COUPLED);
    let a = lls(&["run", "--config", &cfg, "--out", "a", "--seed", "1"], tmp.path());
    let b = lls(&["run", "--config", &cfg, "--out", "b", "--seed", "2"], tmp.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    // The run itself is seed-independent.
    let sa = std::fs::read(tmp.path().join("a/steps.jsonl")).unwrap();
    let sb = std::fs::read(tmp.path().join("b/steps.jsonl")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn verify_recheck_reproduces_the_stored_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_COUPLED);
    let run = lls(&["run", "--config", &cfg, "--out", "art"], tmp.path());
    assert_eq!(run.status.code(), Some(0));
    let verify = lls(&["verify", "--out", "art"], tmp.path());
    assert_eq!(
        verify.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&verify.stderr)
    );
    let stored = std::fs::read(tmp.path().join("art/verification.json")).unwrap();
    let recheck = std::fs::read(tmp.path().join("art/verification_recheck.json")).unwrap();
    assert_eq!(stored, recheck);
    assert!(String::from_utf8_lossy(&verify.stdout).contains("matches"));
}

#[test]
fn verify_without_tables_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "min.toml",
        &MINIMAL.replace("directory = \"out\"", "directory = \"art\""),
    );
    let run = lls(&["run", "--config", &cfg], tmp.path());
    assert_eq!(run.status.code(), Some(0));
    let verify = lls(&["verify", "--out", "art"], tmp.path());
    assert_eq!(verify.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&verify.stderr).contains("keep_tables"));
}

#[test]
fn scan_with_singleton_grid_agrees_with_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_COUPLED);
    let run = lls(&["run", "--config", &cfg, "--out", "r"], tmp.path());
    let scan = lls(&["scan", "--config", &cfg, "--out", "s"], tmp.path());
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(scan.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("s/scan.json")).unwrap())
            .unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["t"], 0.02);
    assert_eq!(entries[0]["passed"], true);
    assert_eq!(report["frontier"], 0.02);
    assert!(tmp.path().join("s/scan_frontier.csv").exists());
}

#[test]
fn coupling_override_takes_effect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_COUPLED);
    let out = lls(&["run", "--config", &cfg, "--out", "o", "--t", "0.0"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/config.json")).unwrap())
            .unwrap();
    assert_eq!(stored["t"], 0.0);
}
