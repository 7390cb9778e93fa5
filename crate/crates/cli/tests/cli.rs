use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latent-events"))
        .current_dir(dir)
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_happy_path_writes_records_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["gen", "--band", "low", "--rates", "10", "--seqs", "10", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&dir.path().join("train.jsonl")), 100);
    assert_eq!(lines(&dir.path().join("val.jsonl")), 50);
    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["config"]["seed"], 7);
    let artifacts = m["artifacts"].to_string();
    assert!(artifacts.contains("train.jsonl"), "{artifacts}");
}

#[test]
fn missing_spec_file_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["klbound", "--spec", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["gen", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen", "train", "eval", "klbound", "graph", "stability", "plot-data"] {
        let out = bin(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--seed") && text.contains("--config"), "{sub}: {text}");
    }
    let help = String::from_utf8_lossy(&bin(dir.path(), &["gen", "--help"]).stdout).to_string();
    assert!(help.contains("[default: 0.07]"), "{help}");
}

#[test]
fn stability_uniform_run_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["stability", "--alpha", "2", "--noise", "uniform", "--eps", "0.1", "--trials", "1000"];
    let out = bin(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = read_json(&dir.path().join("stability.json"));
    assert_eq!(rep["violations"], 0);
    assert_eq!(rep["records"].as_array().unwrap().len(), 1000);
}

#[test]
fn klbound_reports_the_exponential_pair() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"q": {"family": "exponential", "rate": 2.0}, "rate": 1.0, "horizon": 10.0, "eps": 1e-5}"#;
    std::fs::write(dir.path().join("p.json"), spec).unwrap();
    let out = bin(dir.path(), &["klbound", "--spec", "p.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir.path().join("klbound.json"));
    let u = r["u_eps"].as_f64().unwrap();
    assert!((u - 0.19315).abs() < 1e-3, "{u}");
    assert!(r["gap"].as_f64().unwrap() >= -1e-6);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 3, "gen": {"rates": 4, "seqs": 2, "band": "mid"}}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();

    let out = bin(dir.path(), &["--config", "c.json", "gen", "--out", "a"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("a/manifest.json"));
    assert_eq!(m["config"]["seed"], 3);
    assert_eq!(lines(&dir.path().join("a/train.jsonl")), 4 * 2);
    // noise comes from the built-in default
    assert_eq!(m["config"]["params"]["noise"], 0.07);

    let out = bin(dir.path(), &["--config", "c.json", "--seed", "5", "gen", "--seqs", "3", "--out", "b"]);
    assert_eq!(out.status.code(), Some(0));
    let m = read_json(&dir.path().join("b/manifest.json"));
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(lines(&dir.path().join("b/train.jsonl")), 4 * 3);
    assert!(std::fs::read_to_string(dir.path().join("b/train.jsonl")).unwrap().contains("\"mid\""));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"gen": {"ratez": 4}}"#).unwrap();
    let out = bin(dir.path(), &["--config", "c.json", "gen"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn same_seed_gives_identical_gen_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(bin(d.path(), &["gen", "--seed", "11", "--rates", "2", "--seqs", "2"]).status.code(), Some(0));
    }
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
