#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub const VALUES: &str = r#"[
  {"agent": 0, "bundle": [0], "value": 1.0},
  {"agent": 0, "bundle": [1], "value": 0.5},
  {"agent": 0, "bundle": [0, 1], "value": 2.0},
  {"agent": 1, "bundle": [0], "value": 0.8},
  {"agent": 1, "bundle": [1], "value": 0.9},
  {"agent": 1, "bundle": [0, 1], "value": 1.2}
]"#;

/// Two agents, two items, stochastic logit bidders.
pub fn base_config() -> Value {
    json!({
        "version": 1,
        "market": {"items": 2, "agents": 2},
        "scheme": {"scheme": "bundle", "personalized": true},
        "auction": {"rounds": 300, "lambda": 0.0, "early_stop": false},
        "bidder": {
            "model": "stochastic",
            "valuations": "values.json",
            "noise": {"family": "gumbel", "sigma": 0.3},
            "seed": 5
        }
    })
}

/// Writes `values.json` and `config.json` into `dir`.
pub fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    fs::write(dir.join("values.json"), VALUES).unwrap();
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn files_in(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    out
}
