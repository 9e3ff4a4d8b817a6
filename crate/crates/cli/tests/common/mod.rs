#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn hiersumm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiersumm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("hiersumm runs")
}

/// Run one command and panic with its stderr if it fails.
pub fn ok(dir: &Path, args: &[&str]) {
    let out = hiersumm(dir, args);
    assert!(
        out.status.success(),
        "hiersumm {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every stage on the fixture corpus, writing into `dir`.
pub fn pipeline(dir: &Path) {
    let corpus = fixture("corpus.jsonl");
    let cfg = fixture("desk.cfg");
    let (corpus, cfg) = (corpus.to_str().unwrap(), cfg.to_str().unwrap());
    ok(dir, &["tokenize", "--input", corpus, "--vocab-size", "300", "--out", "vocab.txt", "--filtered-dir", "clean"]);
    ok(dir, &["rank-train", "--train", "clean/corpus.jsonl", "--vocab", "vocab.txt", "--config", cfg, "--out", "ranker.bin"]);
    ok(dir, &["rank", "--input", "clean/corpus.jsonl", "--vocab", "vocab.txt", "--ranker", "ranker.bin", "--config", cfg, "--lprime", "5", "--out", "ranked.jsonl"]);
    ok(dir, &["graph", "--input", "ranked.jsonl", "--vocab", "vocab.txt", "--kind", "similarity", "--lprime", "4", "--out", "similarity.jsonl"]);
    ok(dir, &["graph", "--input", "ranked.jsonl", "--vocab", "vocab.txt", "--kind", "discourse", "--lprime", "4", "--out", "discourse.jsonl"]);
    ok(dir, &["train", "--config", cfg, "--vocab", "vocab.txt", "--train", "ranked.jsonl", "--out", "model"]);
    ok(dir, &["generate", "--input", "ranked.jsonl", "--model", "model", "--out", "ht.jsonl"]);
    ok(dir, &["generate", "--input", "ranked.jsonl", "--system", "lead", "--out", "lead.jsonl"]);
    ok(dir, &["generate", "--input", "ranked.jsonl", "--system", "lexrank", "--out", "lexrank.jsonl"]);
    ok(dir, &["evaluate", "--candidates", "ht.jsonl", "--references", "ranked.jsonl", "--out", "eval.json"]);
}

/// Relative path and contents of every file under `root`, sorted by path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
