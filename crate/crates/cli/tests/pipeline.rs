use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ahlm_core::config::RunConfig;
use ahlm_core::pipeline;

const TOY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/toy.txt");

const CONFIG: &str = r#"
[context]
window = 64
stride = 16
j = 16
span_len = 8

[pairs]
pairs_per_doc = 5
spans_per_step = 2
seed = 3

[selector]
epochs = 20
batch_size = 4
hidden = 6

[search]
j_values = [8, 16, 24]
span_values = [4, 8]
"#;

fn ahlm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ahlm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = ahlm(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(TOY, dir.path().join("toy.txt")).unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let p = dir.path().to_path_buf();
    (dir, p)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

/// Every command through the binary, then the same stages through the
/// library, byte for byte.
#[test]
fn full_pipeline_matches_library() {
    let (_tmp, d) = setup();
    let c = ["--config", "run.toml"];
    let run = |rest: &[&str]| ok(&d, &[&c[..], rest].concat());
    run(&["build-vocab", "--corpus", "toy.txt", "--out", "vocab.tsv"]);
    run(&["train-lm", "--corpus", "toy.txt", "--vocab", "vocab.tsv", "--out", "lm.txt"]);
    run(&["gen-pairs", "--corpus", "toy.txt", "--vocab", "vocab.tsv", "--lm", "lm.txt", "--out", "pairs.jsonl"]);
    run(&["train-selector", "--corpus", "toy.txt", "--vocab", "vocab.tsv", "--pairs", "pairs.jsonl", "--out", "sel.json"]);
    let ev = ["--corpus", "toy.txt", "--vocab", "vocab.tsv", "--lm", "lm.txt", "--selector", "sel.json"];
    run(&[&["evaluate"][..], &ev, &["--mode", "ahlm", "--out", "eval.jsonl"]].concat());
    run(&[&["impact-report"][..], &ev, &["--mode", "oracle-greedy", "--out", "impact.jsonl"]].concat());
    run(&["grid-search", "--corpus", "toy.txt", "--vocab", "vocab.tsv", "--lm", "lm.txt", "--out", "grid.jsonl"]);

    let cfg = RunConfig::from_toml(CONFIG).unwrap();
    let corpus = read(&d, "toy.txt");
    let vocab = pipeline::build_vocab_stage(&cfg, &corpus).unwrap().data;
    assert_eq!(vocab, read(&d, "vocab.tsv"));
    let lm = pipeline::train_lm_stage(&cfg, &corpus, &vocab).unwrap().data;
    assert_eq!(lm, read(&d, "lm.txt"));
    let pairs = pipeline::gen_pairs_stage(&cfg, &corpus, &vocab, &lm).unwrap().data;
    assert_eq!(pairs, read(&d, "pairs.jsonl"));
    let sel = pipeline::train_selector_stage(&cfg, &corpus, &vocab, &pairs).unwrap().data;
    assert_eq!(sel, read(&d, "sel.json"));
    let mut ahlm_cfg = cfg.clone();
    ahlm_cfg.context.mode = ahlm_core::Mode::Ahlm;
    let eval = pipeline::evaluate_stage(&ahlm_cfg, &corpus, &vocab, &lm, Some(&sel)).unwrap().data;
    assert_eq!(eval, read(&d, "eval.jsonl"));
    let mut greedy = cfg.clone();
    greedy.context.mode = ahlm_core::Mode::OracleGreedy;
    let impact = pipeline::impact_report_stage(&greedy, &corpus, &vocab, &lm, Some(&sel)).unwrap().data;
    assert_eq!(impact, read(&d, "impact.jsonl"));
    let grid = pipeline::grid_search_stage(&cfg, &corpus, &vocab, &lm).unwrap().data;
    assert_eq!(grid, read(&d, "grid.jsonl"));

    let meta: serde_json::Value = serde_json::from_str(&read(&d, "eval.jsonl.meta.json")).unwrap();
    assert_eq!(meta["command"], "evaluate");
    assert_eq!(meta["config"]["paths"]["selector"], "sel.json");
    assert_eq!(meta["inputs"].as_array().unwrap().len(), 4);
}

fn perplexity_line(dir: &Path, file: &str) -> f64 {
    let last = read(dir, file).lines().last().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&last).unwrap();
    assert_eq!(v["record"], "summary");
    v["perplexity"].as_f64().unwrap()
}

#[test]
fn zero_j_selector_run_equals_baseline() {
    let (_tmp, d) = setup();
    let c = ["--config", "run.toml"];
    let run = |rest: &[&str]| ok(&d, &[&c[..], rest].concat());
    run(&["build-vocab", "--corpus", "toy.txt", "--out", "v"]);
    run(&["train-lm", "--corpus", "toy.txt", "--vocab", "v", "--out", "lm"]);
    run(&["gen-pairs", "--corpus", "toy.txt", "--vocab", "v", "--lm", "lm", "--out", "p"]);
    run(&["train-selector", "--corpus", "toy.txt", "--vocab", "v", "--pairs", "p", "--out", "s"]);
    let ev = ["evaluate", "--corpus", "toy.txt", "--vocab", "v", "--lm", "lm", "--selector", "s"];
    run(&[&ev[..], &["--mode", "baseline", "--j", "0", "--out", "b.jsonl"]].concat());
    run(&[&ev[..], &["--mode", "ahlm", "--j", "0", "--out", "a.jsonl"]].concat());
    assert_eq!(perplexity_line(&d, "b.jsonl").to_bits(), perplexity_line(&d, "a.jsonl").to_bits());
}

#[test]
fn repeated_gen_pairs_is_byte_identical() {
    let (_tmp, d) = setup();
    let c = ["--config", "run.toml"];
    let run = |rest: &[&str]| ok(&d, &[&c[..], rest].concat());
    run(&["build-vocab", "--corpus", "toy.txt", "--out", "v"]);
    run(&["train-lm", "--corpus", "toy.txt", "--vocab", "v", "--out", "lm"]);
    for (out, workers) in [("p1", "1"), ("p2", "1"), ("p3", "3")] {
        run(&["--workers", workers, "gen-pairs", "--corpus", "toy.txt", "--vocab", "v", "--lm", "lm", "--out", out]);
    }
    assert_eq!(read(&d, "p1"), read(&d, "p2"));
    assert_eq!(read(&d, "p1"), read(&d, "p3"));
}

fn fails(dir: &Path, args: &[&str], code: i32, needle: &str) {
    let o = ahlm(dir, args);
    assert_eq!(o.status.code(), Some(code), "{args:?}");
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains(needle), "{err}");
}

#[test]
fn failures_exit_with_one_line() {
    let (_tmp, d) = setup();
    ok(&d, &["build-vocab", "--corpus", "toy.txt", "--out", "v"]);
    fs::write(d.join("bad.tsv"), "not a vocabulary\n").unwrap();
    fs::write(d.join("bad.toml"), "[context]\nspan_length = 4\n").unwrap();

    fails(&d, &["build-vocab", "--out", "x"], 1, "--corpus");
    fails(&d, &["build-vocab", "--corpus", "missing.txt", "--out", "x"], 2, "missing.txt");
    fails(&d, &["train-lm", "--corpus", "toy.txt", "--vocab", "bad.tsv", "--out", "x"], 2, "vocab bad.tsv");
    fails(&d, &["--config", "bad.toml", "build-vocab", "--corpus", "toy.txt", "--out", "x"], 1, "span_length");
    fails(&d, &["train-lm", "--corpus", "toy.txt", "--vocab", "v", "--lambdas", "0.9,0.9,0.9", "--out", "x"], 1, "mixture");
    fails(&d, &["evaluate", "--bogus"], 1, "bogus");
    ok(&d, &["train-lm", "--corpus", "toy.txt", "--vocab", "v", "--out", "lm"]);
    fails(
        &d,
        &["evaluate", "--corpus", "toy.txt", "--vocab", "v", "--lm", "lm", "--j", "12", "--span-len", "8", "--out", "x"],
        1,
        "j=12",
    );
    fails(&d, &["evaluate", "--corpus", "toy.txt", "--vocab", "v", "--lm", "lm", "--mode", "ahlm", "--out", "x"], 1, "selector");
    assert!(!d.join("x").exists());
}
