use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duplex_core::metrics::{barge_in_metrics, offset_grid, MetricsReport};
use duplex_gateway::cli::load_traces;

fn duplex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duplex"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = duplex(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_contents(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn always_finished_scores_fifty_on_a_balanced_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("eot.jsonl");
    let mut lines = String::new();
    for i in 0..20 {
        let (text, label) = if i % 2 == 0 {
            (format!("turn the lights off in room {i}"), "finished")
        } else {
            (format!("could you tell me about {i} and"), "unfinished")
        };
        lines.push_str(&format!("{{\"text\":\"{text}\",\"label\":\"{label}\",\"lang\":\"en\"}}\n"));
    }
    fs::write(&corpus, lines).unwrap();
    let json = ok(&["eval", "eot", "--corpus", s(&corpus), "--backend", "always-finished", "--format", "json"]);
    let report = MetricsReport::from_json(&json).unwrap();
    let en = &report.eot[0].languages[0];
    assert_eq!(en.finished_acc, Some(1.0));
    assert_eq!(en.unfinished_acc, Some(0.0));
    assert_eq!(en.average_acc, Some(0.5));
    let text = ok(&["eval", "eot", "--corpus", s(&corpus), "--backend", "always-finished"]);
    assert!(text.contains("50.0"), "{text}");
}

#[test]
fn simulation_is_reproducible_and_eval_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = ok(&["make-corpus", "--seed", "7", "--count", "6", "--out", s(&corpus)]);
    assert!(out.contains("wrote 6 scenarios"), "{out}");
    let manifest = corpus.join("manifest.jsonl");
    let run = |name: &str, jobs: &str| {
        let traces = dir.path().join(name);
        ok(&[
            "simulate",
            "--manifest",
            s(&manifest),
            "--out",
            s(&traces),
            "--scorers",
            "oracle,energy",
            "--jobs",
            jobs,
        ]);
        traces
    };
    let a = run("a", "1");
    let b = run("b", "3");
    let contents = dir_contents(&a);
    assert_eq!(contents.len(), 2 * 6 * 3);
    assert_eq!(contents, dir_contents(&b));

    let json = ok(&["eval", "barge-in", "--traces", s(&a), "--format", "json"]);
    let report = MetricsReport::from_json(&json).unwrap();
    let traces = load_traces(&a.join("oracle")).unwrap();
    let expected = barge_in_metrics(&traces, &offset_grid(1000)).unwrap();
    let oracle = report.barge_in.iter().find(|r| r.system == "oracle").unwrap();
    assert_eq!(*oracle, expected);
    assert_eq!(report.barge_in.len(), 2);

    let latency = ok(&["eval", "latency", "--traces", s(&a)]);
    assert!(latency.starts_with("Latency\n"), "{latency}");
    let written = dir.path().join("latency.json");
    assert_eq!(ok(&["eval", "latency", "--traces", s(&a), "--format", "json", "--out", s(&written)]), "");
    assert_eq!(MetricsReport::from_json(&fs::read_to_string(&written).unwrap()).unwrap().latency.len(), 2);
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(duplex(&["frobnicate"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(duplex(&["serve", "--config", s(&missing)]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "handshake_timeout_ms = \"soon\"\n").unwrap();
    assert_eq!(duplex(&["serve", "--config", s(&bad)]).status.code(), Some(2));
    // an empty trace directory parses fine but holds nothing to score
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = duplex(&["eval", "barge-in", "--traces", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no barge-in trials"));
    let garbage = dir.path().join("garbage");
    fs::create_dir(&garbage).unwrap();
    fs::write(garbage.join("t.jsonl"), "not json\n").unwrap();
    assert_eq!(duplex(&["eval", "latency", "--traces", s(&garbage)]).status.code(), Some(1));
}
