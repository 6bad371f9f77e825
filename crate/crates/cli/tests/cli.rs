//! End-to-end runs of the `eoslab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eoslab::RFunction;
use eoslab::ScalarLoss;
use tempfile::TempDir;

fn eoslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eoslab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    eoslab(&all)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

/// Data rows of a CSV artifact, after the hash line and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa.len(), fb.len());
    assert!(!fa.is_empty());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn outputs_are_byte_identical_across_workers() {
    let cases: [&[&str]; 3] = [
        &["preset", "fig1a"],
        &["sweep-bifurcation", "--set", "bifurcation.points=41"],
        &[
            "train-net",
            "--set",
            "network.widths=[8, 16]",
            "--set",
            "network.steps=30",
            "--set",
            "network.replicas=2",
            "--set",
            "network.activation=\"tanh\"",
        ],
    ];
    for args in cases {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let mut one = args.to_vec();
        one.extend(["--workers", "1"]);
        let mut three = args.to_vec();
        three.extend(["--workers", "3"]);
        assert_eq!(code(&run_in(a.path(), &one)), 0, "{args:?}");
        assert_eq!(code(&run_in(b.path(), &three)), 0, "{args:?}");
        assert_same_outputs(a.path(), b.path());
    }
}

#[test]
fn every_file_carries_the_config_hash() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run_in(dir.path(), &["sweep-eta", "--eta", "0.04"])), 0);
    let mut hashes = Vec::new();
    for f in files(dir.path()) {
        let text = fs::read_to_string(&f).unwrap();
        let first = text.lines().next().unwrap();
        let hash = first.strip_prefix("# config-sha256: ").expect("hash line");
        assert_eq!(hash.len(), 64);
        assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
        assert!(!text.contains('\r'));
        hashes.push(hash.to_string());
    }
    hashes.dedup();
    assert_eq!(hashes.len(), 1);

    let other = TempDir::new().unwrap();
    assert_eq!(code(&run_in(other.path(), &["sweep-eta", "--eta", "0.02"])), 0);
    let text = fs::read_to_string(other.path().join("report.txt")).unwrap();
    assert!(!text.starts_with(&format!("# config-sha256: {}", hashes[0])));
}

#[test]
fn three_record_trajectory() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["simulate2d", "--set", "run.max_steps=2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("t,p,q,s,loss,sharpness,lambda_tilde"));
    let rows = rows(&dir.path().join("trajectory.csv"));
    let ts: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ts, ["0", "1", "2"]);
    for r in &rows {
        assert_eq!(r.len(), 7);
        assert!(r[2].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn toy_run_reaches_the_limiting_sharpness() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["preset", "fig1a"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    let rows = rows(&dir.path().join("trajectory.csv"));
    let last = rows.last().unwrap();
    let sharpness: f64 = last[5].parse().unwrap();
    let eta = 0.08;
    let predicted = 2.0 / eta - 1.5 * eta;
    assert!((sharpness - predicted).abs() <= 0.02 * predicted, "{sharpness} vs {predicted}");
    // every step of the toy run is sampled
    assert!(rows.iter().all(|r| !r[5].is_empty() && !r[6].is_empty()));
}

#[test]
fn bifurcation_diagram_has_the_expected_branches() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["sweep-bifurcation"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("diagram.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("q,p_sample"));
    let rfn = RFunction::from_loss(ScalarLoss::LogCosh);
    let rows = rows(&dir.path().join("diagram.csv"));
    assert_eq!(rows.len(), 481 * 256);
    let mut qs: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    qs.dedup();
    assert_eq!(qs.len(), 481);
    assert_eq!((qs[0], qs[480]), (0.3, 1.5));
    for r in &rows {
        let (q, p): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        if q > 1.0 {
            assert!(p.abs() <= 1e-8, "q {q}: p {p}");
        } else if q < 1.0 && q > 0.3 {
            assert!((p.abs() - rfn.inverse(q).unwrap()).abs() <= 1e-8, "q {q}: p {p}");
        }
    }
    assert_eq!(rows_count(&dir.path().join("orbits.csv")), 481);
}

fn rows_count(path: &Path) -> usize {
    rows(path).len()
}

#[test]
fn linear_suite_passes_and_writes_a_report() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["verify", "--suite", "linear"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    let report: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(report["failures"].as_integer(), Some(0));
    let verdicts = report["verdict"].as_array().unwrap();
    assert!(verdicts.len() >= 8);
    for v in verdicts {
        assert_eq!(v["status"].as_str(), Some("pass"), "{v:?}");
    }
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\neta = 0.02\n\n[network]\nwidht = 64\n").unwrap();
    let out = run_in(dir.path(), &["train-net", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("widht") && err.contains("line 5"), "{err}");

    let out = run_in(dir.path(), &["simulate2d", "--set", "simulate2d.model=\"cubic\""]);
    assert_eq!(code(&out), 2);
    let out = run_in(dir.path(), &["simulate2d", "--set", "bogus.key=1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["train-net", "--set", "network.gains=[1.0, -2.0]"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("network.gains[1]"));
    let out = run_in(dir.path(), &["simulate2d", "--eta=-0.1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("run.eta"));
    let out = run_in(dir.path(), &["preset", "fig9"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_reports_its_step() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &["train-net", "--eta", "3", "--set", "network.gains=[3.0]", "--set", "network.steps=2000", "--set", "network.sharpness_every=0"],
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("step "), "{}", stderr(&out));
}

#[test]
fn failed_verdicts_exit_four() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["verify", "--suite", "linear", "--set", "tolerances.c_res=1e-6"]);
    assert_eq!(code(&out), 4);
    let report: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("report.txt")).unwrap()).unwrap();
    assert!(report["failures"].as_integer().unwrap() > 0);
}

#[test]
fn inapplicable_is_not_a_failure() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["preset", "fig1b"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("report.txt")).unwrap()).unwrap();
    let statuses: Vec<&str> = report["verdict"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["status"].as_str().unwrap())
        .collect();
    assert!(!statuses.is_empty() && statuses.iter().all(|s| *s == "inapplicable"));
}

#[test]
fn flags_override_the_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[run]\neta = 0.5\nmax_steps = 3\n").unwrap();
    let a = dir.path().join("a");
    let out = eoslab(&["simulate2d", "--config", cfg.to_str().unwrap(), "--eta", "0.01", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("eta=0.01") && stdout.contains("steps=3"), "{stdout}");
}

#[test]
fn exact_network_setting_is_checked() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "train-net",
            "--set",
            "network.y=0.0",
            "--set",
            "network.steps=2000",
            "--set",
            "tolerances.enforce_hypotheses=false",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("report.txt")).unwrap()).unwrap();
    let verdicts = report["verdict"].as_array().unwrap();
    let status = |name: &str| {
        verdicts
            .iter()
            .find(|v| v["name"].as_str() == Some(name))
            .and_then(|v| v["status"].as_str())
            .unwrap()
            .to_string()
    };
    assert_eq!(status("phase1-linear"), "conditional-pass");
    assert_eq!(status("progressive-sharpening-linear"), "pass");
    let runs = rows(&dir.path().join("runs.csv"));
    assert_eq!(runs.len(), 1);
    let s_final: f64 = runs[0][7].parse().unwrap();
    assert!((s_final - 1.0).abs() < 1e-3, "{s_final}");
}
