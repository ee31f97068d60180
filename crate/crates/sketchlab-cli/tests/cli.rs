use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sketchlab"));
    c.env_remove("SKETCHLAB_OUT").env_remove("SKETCHLAB_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_ATTACK: &str = r#"{
  "seed": 5,
  "attack": {
    "family": "projection-threshold", "n": 64, "r": 4, "B": 8, "alpha": 1000,
    "m": 1000, "grid": { "kind": "geometric", "points": 8 }, "runs": 2
  }
}"#;

#[test]
fn malformed_config_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, SMALL_ATTACK.replace("\"points\"", "\"pionts\"")).unwrap();
    let o = run(&["attack", "run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("attack.grid") && err.contains("pionts"), "{err}");

    std::fs::write(&cfg, SMALL_ATTACK.replace("\"m\": 1000", "\"m\": 10")).unwrap();
    let o = run(&["attack", "run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("attack.m"));
}

#[test]
fn pmf_ratio_check_passes_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["stats", "check", "pmf-ratio", "--n", "10", "--C", "2", "--sigma2", "10000", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(dir.path().join("stats_pmf-ratio.json"));
    assert!(r["max_deviation"].as_f64().unwrap() <= 0.01);
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn threshold_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["harddist", "tvd", "--n", "4", "--spike", "10", "--trials", "20000", "--max-tvd", "0.15", "--out", out]);
    assert_eq!(code(&o), 2);
    let o = run(&["harddist", "tvd", "--n", "4", "--spike", "10", "--trials", "20000", "--min-tvd", "0.3", "--out", out]);
    assert_eq!(code(&o), 0);
}

#[test]
fn attack_run_writes_artifacts_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, SMALL_ATTACK).unwrap();
    let first = dir.path().join("first");
    let o = bin().args(["attack", "run", "--config", cfg.to_str().unwrap()]).env("SKETCHLAB_OUT", &first).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["transcript.jsonl", "summary.csv", "certificate.json", "exploits.json", "report.txt", "config.json"] {
        assert!(first.join(f).exists(), "{f}");
    }
    let mut reader = csv::Reader::from_path(first.join("summary.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["run_id", "seed", "round", "sigma2", "rate", "m_prime", "score", "accepted"]);
    assert!(reader.records().count() >= 2);
    for line in std::fs::read_to_string(first.join("transcript.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["event"].is_string());
    }
    assert_eq!(read_json(first.join("certificate.json")).as_array().unwrap().len(), 2);

    let second = dir.path().join("second");
    let emitted = first.join("config.json");
    let o = run(&["attack", "run", "--config", emitted.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["summary.csv", "transcript.jsonl", "certificate.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }

    let third = dir.path().join("third");
    let o = run(&["attack", "run", "--config", emitted.to_str().unwrap(), "--seed", "6", "--out", third.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(first.join("summary.csv")).unwrap(), std::fs::read(third.join("summary.csv")).unwrap());
}

#[test]
fn shipped_projection_config_finds_verified_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("projection_r8_n128.json");
    let out = dir.path().to_str().unwrap();
    let o = run(&["attack", "run", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let exploits = read_json(dir.path().join("exploits.json"));
    let verified = exploits.as_array().unwrap().iter().filter(|e| e["exploit_count"].as_u64().unwrap() > 0).count();
    assert!(verified >= 8, "{verified}");

    let o = run(&["attack", "verify", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 0);
    let again = read_json(dir.path().join("verification.json"));
    assert_eq!(again.as_array().unwrap().len(), exploits.as_array().unwrap().len());
}

#[test]
fn sketch_build_and_info_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, SMALL_ATTACK).unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["sketch", "build", "--config", cfg.to_str().unwrap(), "--out", out])), 0);
    let file = read_json(dir.path().join("sketch.json"));
    let o = run(&["sketch", "info", "--sketch", dir.path().join("sketch.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let info: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(info, file["info"]);
    assert_eq!(info["r"], 4);
}

#[test]
fn harddist_gen_and_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["harddist", "gen", "--family", "opnorm-alpha", "--count", "3", "--seed", "1", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = std::fs::read_to_string(dir.path().join("instances.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);
    let cfg = repo_config("opnorm_alpha_gap.json");
    let o = run(&["harddist", "gap", "--config", cfg.to_str().unwrap(), "--pairs", "20", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(read_json(dir.path().join("gap.json"))["pairs"], 20);
}

#[test]
fn suite_runs_selected_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["suite", "acceptance", "--criteria", "5,6", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("criterion  5 PASS") && stdout.contains("criterion  6 PASS"), "{stdout}");
}
