use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn riccilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riccilab"))
        .args(args)
        .env_remove("RICCILAB_OUT")
        .output()
        .expect("binary runs")
}

fn run(config: &str, out: &Path) -> Output {
    riccilab(&["run", "--config", config, "--out", out.to_str().unwrap()])
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

const SPHERE: &str = r#"
schema_version = 1
name = "sphere-collapse"
seed = 3

[initial]
fixture = "sphere"

[flow]
horizon = 1.0
mode = "integrate"

[verifier.type-iii]
kind = "type-iii"
"#;

#[test]
fn unknown_backend_is_a_schema_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SPHERE.replace("[flow]", "[backend]\nkind = \"wormhole\"\n\n[flow]");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let out = run(cfg.to_str().unwrap(), &tmp.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("backend.kind"), "{err}");
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn unknown_verifier_field_and_version_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = SPHERE.replace(
        "kind = \"type-iii\"",
        "kind = \"type-iii\"\ntolerence = 1.0",
    );
    let cfg = write_config(tmp.path(), "typo.toml", &typo);
    let out = run(cfg.to_str().unwrap(), &tmp.path().join("a"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("verifier.type-iii"));

    let old = SPHERE.replace("schema_version = 1", "schema_version = 7");
    let cfg = write_config(tmp.path(), "old.toml", &old);
    let out = run(cfg.to_str().unwrap(), &tmp.path().join("b"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
}

#[test]
fn golden_flat_suite_is_complete_passing_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("flat-kernel-suite", &a).status.code(), Some(0));
    let out = riccilab(&[
        "--threads",
        "2",
        "run",
        "--config",
        "flat-kernel-suite",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let listing = files(&a);
    let expected = [
        "manifest.json",
        "reports/center-f.json",
        "reports/distance.json",
        "reports/entropy.json",
        "reports/envelope.json",
        "reports/gradient.json",
        "reports/harnack.json",
        "reports/mass-conjugate.json",
        "reports/mass-forward.json",
        "reports/type-iii.json",
        "reports/volume.json",
        "scenario.toml",
        "series/entropy_entropy.csv",
        "series/mass_conjugate.csv",
        "series/mass_forward.csv",
        "series/monitor.csv",
        "summary.json",
    ];
    assert_eq!(listing, expected);
    for f in &listing {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let summary: Value =
        serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    let reports = summary["reports"].as_object().unwrap();
    assert_eq!(reports.len(), 10);
    for (name, row) in reports {
        assert_eq!(row["pass"], Value::Bool(true), "{name}");
        assert_eq!(row["in_hypothesis"], Value::Bool(true), "{name}");
    }
    for f in listing.iter().filter(|f| f.starts_with("reports/")) {
        let r: Value = serde_json::from_slice(&fs::read(a.join(f)).unwrap()).unwrap();
        assert!(
            !r["target"].as_str().unwrap().is_empty(),
            "{f} names no target"
        );
    }
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = riccilab(&[
        "run",
        "--config",
        "flat-kernel-suite",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: Value =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
}

#[test]
fn report_lists_every_verifier_once() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(run("flat-kernel-suite", &dir).status.code(), Some(0));
    let out = riccilab(&["report", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let matrix: Vec<&str> = text.split("\n\n").nth(1).unwrap().lines().skip(1).collect();
    let names = [
        "center-f",
        "distance",
        "entropy",
        "envelope",
        "gradient",
        "harnack",
        "mass-conjugate",
        "mass-forward",
        "type-iii",
        "volume",
    ];
    assert_eq!(matrix.len(), names.len());
    for name in names {
        assert_eq!(
            matrix
                .iter()
                .filter(|l| l.split_whitespace().next() == Some(name))
                .count(),
            1,
            "{name}"
        );
    }
    assert!(text.contains("fitted constants"));
    assert!(text.contains("entropy_entropy"));
    assert!(dir.join("report.txt").is_file());
    let csv = fs::read_to_string(dir.join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), names.len() + 1);
}

#[test]
fn solver_failure_keeps_a_partial_run_and_report_marks_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sphere.toml", SPHERE);
    let dir = tmp.path().join("run");
    let out = run(cfg.to_str().unwrap(), &dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("summary.json").is_file());

    let out = riccilab(&["report", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("incomplete"));
    assert!(text.contains("flow") && text.contains("failed"));
    assert!(text.contains("verifier.type-iii") && text.contains("skipped"));
}

#[test]
fn report_on_an_empty_directory_is_a_missing_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = riccilab(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing manifest"));
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SPHERE
        .replace("\"sphere\"", "\"flat-torus\"")
        .replace("mode = \"integrate\"", "mode = \"static\"");
    let cfg = write_config(tmp.path(), "torus.toml", &text);
    let out = Command::new(env!("CARGO_BIN_EXE_riccilab"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("RICCILAB_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp
        .path()
        .join("root/sphere-collapse/summary.json")
        .is_file());
}

#[test]
fn list_fixtures_names_the_catalog() {
    let out = riccilab(&["list-fixtures"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "flat-plane",
        "cone",
        "expander",
        "hyperbolic",
        "sphere",
        "flat-t2xt2",
    ] {
        assert!(text.contains(name), "{name}");
    }
}
