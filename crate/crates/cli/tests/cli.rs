use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use interlace_lab::config::Kind;
use interlace_lab::output::sha256_hex;
use interlace_lab::{parse_config_str, CliError};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_interlace-lab"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn violations(text: &str) -> Vec<String> {
    match parse_config_str(text) {
        Err(CliError::Validation(v)) => v,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

const SETUP: &str = r#""k": {"shape": "ball", "center": [0, 0, 0], "radius": 0.25},
    "b0": {"lo": [-0.75, -0.75, -0.75], "hi": [0.75, 0.75, 0.75]},
    "b": {"lo": [-1, -1, -1], "hi": [1, 1, 1]}"#;

#[test]
fn minimal_config_is_filled_with_echoed_defaults() {
    let cfg = parse_config_str(r#"{"kind": "laplace-threeway"}"#).unwrap();
    assert_eq!(cfg.kind, Kind::LaplaceThreeway);
    for key in ["d", "seed", "box", "n", "v", "u", "samples", "radius", "threads", "green_tol", "out"] {
        assert!(cfg.echo.contains_key(key), "{key} missing from echo");
        assert!(cfg.defaulted.iter().any(|k| k == key), "{key} not marked as defaulted");
    }
    assert_eq!(cfg.echo["n"], 3);
    assert_eq!(cfg.echo["radius"], 8);
}

#[test]
fn all_violations_are_listed() {
    let v = violations(r#"{"kind": "laplace-threeway", "n": 0, "u": -1, "samples": 0, "colour": "red", "v": "x"}"#);
    let text = v.join("\n");
    for needle in
        ["n must be positive", "u must be positive", "samples must be at least 1", "colour: unknown key", "v:"]
    {
        assert!(text.contains(needle), "{needle:?} not in {text}");
    }
    assert!(v.len() >= 5);
}

#[test]
fn duplicate_key_is_rejected() {
    let v = violations(r#"{"kind": "capacity-scan", "n_ladder": [4], "n_ladder": [8]}"#);
    assert!(v[0].contains("duplicate key `n_ladder`"), "{v:?}");
    let v = violations(
        r#"{"kind": "capacity-scan", "region": {"shape": "ball", "center": [0,0,0], "center": [1,1,1], "radius": 1}}"#,
    );
    assert!(v[0].contains("duplicate key `center`"), "{v:?}");
}

#[test]
fn mollifier_radius_must_fit_between_boxes() {
    let text = format!(r#"{{"kind": "insulation", {SETUP}, "delta": 0.25, "a": 2, "u": 1}}"#);
    let v = violations(&text);
    assert!(v.iter().any(|e| e.contains("delta = 0.25 must be smaller than the distance")), "{v:?}");
    let ok = format!(r#"{{"kind": "insulation", {SETUP}, "delta": 0.2, "a": 2, "u": 1}}"#);
    parse_config_str(&ok).unwrap();
}

#[test]
fn kind_specific_preconditions() {
    let v = violations(r#"{"kind": "laplace-threeway", "radius": 4}"#);
    assert!(v[0].contains("below twice the window radius"), "{v:?}");
    let v = violations(r#"{"kind": "subadditivity", "tests": [{"kind": "coordinate", "axis": 0}]}"#);
    assert!(v[0].contains("first test function"), "{v:?}");
    let v = violations(r#"{"kind": "rate-function"}"#);
    assert!(v.iter().any(|e| e.contains("profile: missing")), "{v:?}");
    let v = violations(r#"{"kind": "tilted-entropy", "a": 0.5, "eps": 0.1}"#);
    assert!(v.iter().any(|e| e.contains("a + eps >= u")), "{v:?}");
    let v = violations(r#"{"kind": "nonsense", "x": 1}"#);
    assert_eq!(v.len(), 1, "{v:?}");
}

#[test]
fn same_seed_gives_identical_files_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"kind": "laplace-threeway", "samples": 3000, "seed": 11}"#);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = bin().arg("run").arg(&cfg).arg("--out").arg(&out).args(["--threads", threads]).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(out);
    }
    for name in ["laplace.csv", "agreement.csv"] {
        let a = fs::read(outputs[0].join(name)).unwrap();
        let b = fs::read(outputs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    // Checksums in the manifest match the files.
    let manifest: Value = serde_json::from_slice(&fs::read(outputs[0].join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    for f in files {
        let bytes = fs::read(outputs[0].join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"], sha256_hex(&bytes));
    }
    assert_eq!(manifest["config"]["seed"], 11);
    assert!(manifest["overrides"].as_array().unwrap().iter().any(|k| k == "threads"));
    assert!(!manifest["timings"].as_array().unwrap().is_empty());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"kind": "laplace-threeway", "samples": 1000, "seed": 1}"#);
    let run = |seed: &str, out: &str| {
        let o =
            bin().arg("run").arg(&cfg).args(["--out", out, "--seed", seed]).current_dir(dir.path()).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(out).join("laplace.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("b/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 2);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bin().args(args).current_dir(dir.path()).output().unwrap().status.code();

    write(dir.path(), "bad.json", r#"{"kind": "capacity-scan", "n_ladder": []}"#);
    assert_eq!(code(&["validate", "bad.json"]), Some(2));
    write(dir.path(), "broken.json", r#"{"kind": "capacity-scan""#);
    assert_eq!(code(&["run", "broken.json"]), Some(2));

    // Valid, but the region has no lattice sites at N = 1.
    write(
        dir.path(),
        "empty.json",
        r#"{"kind": "capacity-scan", "n_ladder": [1], "region": {"shape": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.1}}"#,
    );
    let o = bin().args(["run", "empty.json", "--out", "o"]).current_dir(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("capacity_scaled failed (N = 1)"), "{}", stderr(&o));

    assert_eq!(code(&["run", "missing.json"]), Some(4));
    write(dir.path(), "blocker", "");
    write(dir.path(), "ok.json", r#"{"kind": "capacity-scan", "n_ladder": [2]}"#);
    assert_eq!(code(&["run", "ok.json", "--out", "blocker/sub"]), Some(4));
    assert_eq!(code(&["run", "ok.json", "--out", "fine"]), Some(0));
    assert!(dir.path().join("fine/capacity.csv").exists());
}

#[test]
fn green_oracle_reproduces_return_value() {
    let o = bin().args(["oracle", "green", "--d", "3", "--tol", "1e-10", "--extent", "1"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,x3,g"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let g0: f64 = first[3].parse().unwrap();
    assert!((g0 - 1.516_386_059_151_978).abs() < 1e-9);
    // One-step identity g(e_1) = g(0) - 1.
    let second: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&second[..3], ["1", "0", "0"]);
    assert!((second[3].parse::<f64>().unwrap() - (g0 - 1.0)).abs() < 1e-9);
    assert_eq!(text.lines().count(), 1 + 4);
}
