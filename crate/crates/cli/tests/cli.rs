use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mti_core::decode::read_traces;
use mti_core::DecodeTrace;

fn mti(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mti")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mti(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn traces(path: &Path) -> Vec<DecodeTrace> {
    read_traces(fs::read(path).unwrap().as_slice()).unwrap()
}

#[test]
fn metadata_echoes_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.jsonl");
    let out_s = out.to_str().unwrap();
    ok(&["generate", "--seed", "7", "--mode", "mti", "--tau", "1.5", "--omega", "1.5", "--neg-prompt", "OUTPUT ERROR", "--max-tokens", "6", "--prompt", "hi", "--trace-out", out_s]);
    let t = &traces(&out)[0];
    let m = &t.metadata;
    assert_eq!(m.mode.as_str(), "mti");
    assert_eq!((m.tau, m.omega, m.max_tokens), (1.5, 1.5, 6));
    assert_eq!(m.neg_prompt, "OUTPUT ERROR");
    assert_eq!(m.neg_prompt_tokens.len(), 12);
    assert_eq!(m.sampler, mti_core::SamplerConfig::greedy());
    assert_eq!(m.prompt, "hi");
    assert_eq!(m.prompt_tokens, vec![256, 104, 105]);
    assert_eq!(
        m.model_source,
        Some(mti_core::ModelSource::Seed {
            seed: 7,
            embed_scale: 1.0
        })
    );
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("p.txt");
    fs::write(&prompts, "one\ntwo\nthree\n").unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        let args = [
            "generate", "--seed", "3", "--prompts-file", prompts.to_str().unwrap(), "--sampler", "stochastic", "--sample-seed", "11",
            "--max-tokens", "10", "--tau", "5.53", "--trace-out", p.to_str().unwrap(),
        ];
        let stdout = ok(&args);
        (fs::read(p).unwrap(), stdout)
    };
    let (a, sa) = run("a.jsonl");
    let (b, sb) = run("b.jsonl");
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(sa.lines().count(), 3);
}

#[test]
fn infinite_tau_matches_direct() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let common = ["--seed", "5", "--embed-scale", "5", "--prompt", "abc", "--max-tokens", "12"];
    ok(&[&["generate", "--tau", "inf", "--trace-out", a.to_str().unwrap()][..], &common].concat());
    ok(&[&["generate", "--mode", "direct", "--trace-out", b.to_str().unwrap()][..], &common].concat());
    assert_eq!(traces(&a)[0].generated_tokens(), traces(&b)[0].generated_tokens());
    assert_eq!(traces(&a)[0].totals.forwarded_positions_branch, 0);
}

#[test]
fn analyze_reports_generate_usage() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.jsonl");
    let gen = ok(&["generate", "--seed", "2", "--embed-scale", "5", "--prompt", "xyz", "--tau", "1.0", "--max-tokens", "20", "--trace-out", t.to_str().unwrap()]);
    let ana = ok(&["analyze", "-i", t.to_str().unwrap()]);
    let usage = |s: &str| s.lines().next().unwrap().split_whitespace().find(|w| w.starts_with("cfg_usage=")).unwrap().to_string();
    assert_eq!(usage(&gen), usage(&ana));
    assert_eq!(gen.lines().next(), ana.lines().next());
}

#[test]
fn labels_enable_cohorts() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("p.txt");
    fs::write(&prompts, "a\nb\nc\nd\n").unwrap();
    let t = dir.path().join("t.jsonl");
    ok(&["generate", "--seed", "4", "--embed-scale", "5", "--prompts-file", prompts.to_str().unwrap(), "--max-tokens", "8", "--trace-out", t.to_str().unwrap()]);
    let labels = dir.path().join("labels.txt");
    fs::write(&labels, "correct\nincorrect\n1\n0\n").unwrap();
    let report = dir.path().join("r.json");
    let csv = dir.path().join("csv");
    ok(&[
        "analyze", "-i", t.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--report-out", report.to_str().unwrap(), "--csv-dir",
        csv.to_str().unwrap(),
    ]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["cohorts"]["correct"]["count"], 2);
    assert_eq!(r["cohorts"]["incorrect"]["count"], 2);
    let per_trace = fs::read_to_string(csv.join("per_trace.csv")).unwrap();
    assert!(per_trace.starts_with("index,source,model_name,correct,tokens,"));
    assert_eq!(per_trace.lines().count(), 5);
    let hist = fs::read_to_string(csv.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,changed,unchanged\n"));
    assert!(hist.trim_end().ends_with(|c: char| c.is_ascii_digit()));
    assert!(fs::read_to_string(csv.join("frequencies.csv")).unwrap().starts_with("rank,token_text,count"));

    fs::write(&labels, "correct\n").unwrap();
    assert!(!mti(&["analyze", "-i", t.to_str().unwrap(), "--labels", labels.to_str().unwrap()]).status.success());
}

#[test]
fn malformed_line_is_cited() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.jsonl");
    ok(&["generate", "--seed", "1", "--prompt", "q", "--max-tokens", "20", "--trace-out", t.to_str().unwrap()]);
    let mut lines: Vec<String> = fs::read_to_string(&t).unwrap().lines().map(String::from).collect();
    lines[16] = "{\"step\": 15, \"token_text\": ".to_string();
    fs::write(&t, lines.join("\n")).unwrap();
    let out = mti(&["analyze", "-i", t.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(6));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 17"), "{err}");
}

#[test]
fn error_categories_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing model source is a usage error.
    assert_eq!(mti(&["generate", "--prompt", "a"]).status.code(), Some(2));
    // Unreadable weight file.
    let missing = dir.path().join("nope.bin");
    assert_eq!(mti(&["generate", "--weights", missing.to_str().unwrap(), "--prompt", "a"]).status.code(), Some(3));
    // Corrupt weight file.
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, b"XXXXjunk").unwrap();
    let out = mti(&["generate", "--weights", bad.to_str().unwrap(), "--prompt", "a"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model error"));
    // Prompt longer than the context.
    let long = "x".repeat(600);
    let out = mti(&["generate", "--seed", "1", "--prompt", &long]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overflow"));
}

#[test]
fn exported_weights_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.bin");
    ok(&["export-weights", "--seed", "9", "--out", w.to_str().unwrap()]);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&["generate", "--seed", "9", "--prompt", "r", "--max-tokens", "5", "--trace-out", a.to_str().unwrap()]);
    ok(&["generate", "--weights", w.to_str().unwrap(), "--prompt", "r", "--max-tokens", "5", "--trace-out", b.to_str().unwrap()]);
    let (a, b) = (&traces(&a)[0], &traces(&b)[0]);
    assert_eq!(a.records, b.records);
    assert_eq!(a.metadata.model_hash, b.metadata.model_hash);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 6\nprompt = hello\nmax-tokens = 4\nomega = 3\n").unwrap();
    let t = dir.path().join("t.jsonl");
    ok(&["generate", "--config", cfg.to_str().unwrap(), "--omega", "2", "--trace-out", t.to_str().unwrap()]);
    let m = &traces(&t)[0].metadata;
    assert_eq!((m.omega, m.max_tokens, m.prompt.as_str()), (2.0, 4, "hello"));
}

#[test]
fn bench_passes_closed_forms() {
    let out = ok(&["bench", "--seed", "3", "--embed-scale", "5", "--prompt", "bench", "--max-tokens", "6", "--tau", "1.0", "--repetitions", "1"]);
    assert!(out.contains("counters match the cost model"));
    assert_eq!(out.lines().filter(|l| l.contains("prompt=0")).count(), 3);
}

#[test]
fn help_documents_entropy_sign() {
    let out = ok(&["generate", "--help"]);
    assert!(out.contains("H = -sum_i p_i ln p_i"));
    assert!(out.contains("nats"));
    assert!(out.contains("never negative"));
}
