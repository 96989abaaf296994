#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small, fast settings shared by the CLI tests.
pub const SMALL: &str = r#"
[paths]
dataset = "data.csv"
output_dir = "out"

[model]
latent_dim = 3
num_inducing = 6

[train]
max_iters = 150
learning_rate = 0.02
convergence_window = 0

[decode]
iterations = 40
n_samples = 30

[cv]
k_folds = 3

[features]
k_features = 6

[synth]
n = 30
d = 8
k = 2
q_true = 2
noise_sd = 0.3
class_separation = 3.0
seed = 3

[gradcheck]
seeds = 2
"#;

pub fn ldgd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldgd"))
        .args(args)
        .current_dir(dir)
        .env_remove("LDGD_LOG")
        .output()
        .expect("binary runs")
}

/// Runs a subcommand with `config.toml` and asserts success.
pub fn ok(dir: &Path, command: &str) -> Output {
    ok_with(dir, &[command, "--config", "config.toml"])
}

pub fn ok_with(dir: &Path, args: &[&str]) -> Output {
    let out = ldgd(dir, args);
    assert!(
        out.status.success(),
        "ldgd {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

/// Header and rows of a comma-separated table.
pub fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let c = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[c].parse().unwrap()).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
