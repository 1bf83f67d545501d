#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn pcgkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcgkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = pcgkit(args);
    assert!(
        out.status.success(),
        "pcgkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// `(kind, message)` of the JSON error a failing run prints on stderr.
pub fn err(args: &[&str]) -> (String, String) {
    let out = pcgkit(args);
    assert!(!out.status.success(), "pcgkit {args:?} unexpectedly succeeded");
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {text}"));
    (v["error"].as_str().unwrap().to_string(), v["message"].as_str().unwrap().to_string())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn write(p: &Path, text: &str) -> PathBuf {
    std::fs::write(p, text).unwrap();
    p.to_path_buf()
}

/// Rows of a CSV file without the header.
pub fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

/// Small encoder and head so pipeline tests run in seconds.
pub const SMALL_CONFIG: &str = r#"{
  "seed": 11,
  "ssl": {"embed_dim": 16, "projector_hidden": 16, "projection_dim": 8, "predictor_hidden": 16, "epochs": 2, "batch_size": 8},
  "head": {"hidden": 8, "epochs": 15, "batch_size": 8}
}"#;

/// Same manifest keeping only the listed leading columns, with paths rebased onto `corpus`.
pub fn strip_columns(manifest: &Path, corpus: &Path, keep: usize, out: &Path) -> PathBuf {
    let text = std::fs::read_to_string(manifest).unwrap();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split(',').take(keep).collect();
        let mut cols: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
        if i > 0 {
            cols[0] = corpus.join(&cols[0]).to_string_lossy().into_owned();
        }
        lines.push(cols.join(","));
    }
    write(out, &(lines.join("\n") + "\n"))
}
