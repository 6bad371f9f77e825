#![allow(dead_code)]

pub mod table;

use serde_json::Value;

pub struct Fixtures(Value);

impl Fixtures {
    /// All leaf paths, `/`-separated.
    pub fn keys(&self) -> Vec<String> {
        fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
            match v.as_object() {
                Some(map) => {
                    for (k, child) in map {
                        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}/{k}") };
                        walk(child, &path, out);
                    }
                }
                None => out.push(prefix.to_string()),
            }
        }
        let mut out = Vec::new();
        walk(&self.0, "", &mut out);
        out
    }

    pub fn load() -> Self {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracles.json");
        let text = std::fs::read_to_string(path).expect("fixture file");
        Fixtures(serde_json::from_str(&text).expect("fixture json"))
    }

    /// Value at a `/`-separated path, parsed from its decimal string.
    pub fn num(&self, path: &str) -> f64 {
        let mut v = &self.0;
        for key in path.split('/') {
            v = v.get(key).unwrap_or_else(|| panic!("missing fixture {path}"));
        }
        v.as_str()
            .unwrap_or_else(|| panic!("fixture {path} is not a decimal string"))
            .parse()
            .unwrap_or_else(|_| panic!("fixture {path} does not parse"))
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

#[track_caller]
pub fn assert_rel(got: f64, want: f64, tol: f64) {
    assert!(rel_err(got, want) <= tol, "got {got:e}, want {want:e}, rel err {:e} > {tol:e}", rel_err(got, want));
}

#[track_caller]
pub fn assert_abs(got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "got {got:e}, want {want:e}, abs err {:e} > {tol:e}", (got - want).abs());
}
