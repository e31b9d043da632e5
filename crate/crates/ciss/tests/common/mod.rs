#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use ciss_core::{ClassId, LabelGrid, ScoreMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    /// The single JSON document on stdout.
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout)
            .unwrap_or_else(|e| panic!("stdout is not one JSON document ({e}):\n{}", self.stdout))
    }

    pub fn error(&self) -> Value {
        let line = self.stderr.lines().last().unwrap_or("");
        serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr tail is not JSON ({e}):\n{}", self.stderr))
    }
}

pub fn ciss_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ciss"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("spawn ciss");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

pub fn ciss(args: &[&str]) -> Output {
    ciss_with_env(args, &[])
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn random_scores(rng: &mut ChaCha8Rng, map: &[u8], n: usize) -> ScoreMatrix {
    let logits = (0..n * map.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
    ScoreMatrix::new(map.iter().copied().map(ClassId).collect(), logits).unwrap()
}

/// Writes a random loss case with old classes {1, 2}, new classes {3, 4},
/// two current and two memory items of `n` pixels, and every external term.
pub fn write_random_case(dir: &Path, seed: u64, n: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for (i, source) in ["current", "current", "memory", "memory"].iter().enumerate() {
        let allowed: &[u8] = if *source == "current" { &[0, 3, 4] } else { &[0, 1, 2] };
        let mut raw: Vec<u8> = (0..n).map(|_| allowed[rng.random_range(0..allowed.len())]).collect();
        raw[n - 1] = 255;
        ciss::save_grid(&dir.join(format!("y{i}.pgm")), &LabelGrid::from_raw(n, 1, &raw).unwrap()).unwrap();
        ciss::save_scores(&random_scores(&mut rng, &[2, 0, 4, 1, 3], n), &dir.join(format!("z{i}.txt"))).unwrap();
        ciss::save_scores(&random_scores(&mut rng, &[1, 0, 2], n), &dir.join(format!("prev{i}.bin"))).unwrap();
        items.push(json!({
            "source": source,
            "scores": format!("z{i}.txt"),
            "labels": format!("y{i}.pgm"),
            "prev_scores": format!("prev{i}.bin"),
            "kd": rng.random_range(0.0..2.0),
            "dkd": rng.random_range(0.0..2.0),
            "ac": rng.random_range(0.0..2.0),
            "pod": rng.random_range(0.0..2.0),
        }));
    }
    let case = json!({
        "layout": {"old": [1, 2], "new": [3, 4]},
        "items": items,
        "config": {"lambda": 5.0, "gamma": 1.7, "alpha": 0.6, "beta": 1.3, "kd_includes_bg": true},
    });
    let path = dir.join("case.json");
    std::fs::write(&path, serde_json::to_string_pretty(&case).unwrap()).unwrap();
    path
}

/// Five-image fixture build arguments for one scenario.
pub fn venn_build_args(scenario: &str, out: &Path) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "build".into(),
        "--manifest".into(),
        fixture("venn/manifest.json").display().to_string(),
        "--scenario".into(),
        scenario.into(),
        "--task".into(),
        "1-1".into(),
        "--class-order".into(),
        fixture("venn/class_order.txt").display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    if scenario == "partitioned" {
        for a in ["--seed", "0", "--assign", "Img1=2", "--assign", "Img2=2", "--assign", "Img4=1"] {
            args.push(a.into());
        }
    }
    args
}

pub fn task_lists(split_json: &Value) -> Vec<Vec<String>> {
    split_json["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            t["image_ids"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_string())
                .collect()
        })
        .collect()
}
