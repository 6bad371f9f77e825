//! CSV and report writers. Floats carry 17 significant digits, lines end in LF,
//! and every file opens with the config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use eoslab::dynamics::{OrbitReport, Period};
use eoslab::{BifurcationDiagram, TheoremVerdict, Trajectory};

pub const TRAJECTORY_HEADER: &str = "t,p,q,s,loss,sharpness,lambda_tilde";
pub const DIAGRAM_HEADER: &str = "q,p_sample";
pub const ORBITS_HEADER: &str = "q,period,multiplier";

/// Round-trippable scientific notation.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn header(hash: &str) -> String {
    format!("# config-sha256: {hash}\n")
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Rows with `t` a multiple of `stride`, plus the final row.
pub fn trajectory_csv(traj: &Trajectory, stride: usize, hash: &str) -> String {
    let mut s = header(hash);
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    let last = traj.steps.len().saturating_sub(1);
    for (i, r) in traj.steps.iter().enumerate() {
        if r.t % stride.max(1) != 0 && i != last {
            continue;
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.t,
            num(r.point.p),
            num(r.point.q),
            num(r.s),
            num(r.loss),
            opt(r.sharpness),
            opt(r.lambda_tilde)
        );
    }
    s
}

pub fn diagram_csv(diagram: &BifurcationDiagram, hash: &str) -> String {
    let mut s = header(hash);
    s.push_str(DIAGRAM_HEADER);
    s.push('\n');
    for (q, samples) in diagram.q_grid.iter().zip(&diagram.attractor_samples) {
        let q = num(*q);
        for p in samples {
            let _ = writeln!(s, "{q},{}", num(*p));
        }
    }
    s
}

pub fn orbits_csv(q_grid: &[f64], orbits: &[OrbitReport], hash: &str) -> String {
    let mut s = header(hash);
    s.push_str(ORBITS_HEADER);
    s.push('\n');
    for (q, o) in q_grid.iter().zip(orbits) {
        let period = match o.period {
            Period::Periodic(k) => k.to_string(),
            Period::Aperiodic => String::new(),
        };
        let _ = writeln!(s, "{},{period},{}", num(*q), opt(o.multiplier));
    }
    s
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn toml_key(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        toml_string(k)
    }
}

/// Verdicts as TOML: one `[[verdict]]` table each, with `measured` and
/// `predicted` subtables.
pub fn report(verdicts: &[TheoremVerdict], hash: &str) -> String {
    let mut s = header(hash);
    let failures = verdicts.iter().filter(|v| v.is_failure()).count();
    let _ = writeln!(s, "verdicts = {}\nfailures = {failures}", verdicts.len());
    for v in verdicts {
        let _ = writeln!(s, "\n[[verdict]]");
        let _ = writeln!(s, "name = {}", toml_string(&v.name));
        let _ = writeln!(s, "status = {}", toml_string(v.status.as_str()));
        let _ = writeln!(s, "pass = {}", v.pass);
        let _ = writeln!(s, "tolerance = {}", num(v.tolerance));
        let notes: Vec<String> = v.notes.iter().map(|n| toml_string(n)).collect();
        let _ = writeln!(s, "notes = [{}]", notes.join(", "));
        for (title, map) in [("measured", &v.measured), ("predicted", &v.predicted)] {
            let _ = writeln!(s, "[verdict.{title}]");
            for (k, x) in map {
                let _ = writeln!(s, "{} = {}", toml_key(k), num(*x));
            }
        }
    }
    s
}

pub fn emit_trajectory(traj: &Trajectory, stride: usize, path: &Path, hash: &str) -> Result<()> {
    write(path, &trajectory_csv(traj, stride, hash))
}

pub fn emit_diagram(diagram: &BifurcationDiagram, path: &Path, hash: &str) -> Result<()> {
    write(path, &diagram_csv(diagram, hash))
}

pub fn emit_orbits(q_grid: &[f64], orbits: &[OrbitReport], path: &Path, hash: &str) -> Result<()> {
    write(path, &orbits_csv(q_grid, orbits, hash))
}

pub fn emit_report(verdicts: &[TheoremVerdict], path: &Path, hash: &str) -> Result<()> {
    write(path, &report(verdicts, hash))
}

/// A headed CSV from preformatted rows.
pub fn emit_table(columns: &str, rows: &[String], path: &Path, hash: &str) -> Result<()> {
    let mut s = header(hash);
    s.push_str(columns);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    write(path, &s)
}
