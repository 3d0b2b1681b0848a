use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msrnn::eval::{trace_driven_simulate, ScriptedTrace, TokenStream};
use msrnn::{PolicyKind, PolicySpec};

fn msrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msrnn"))
        .args(args)
        .output()
        .expect("spawn msrnn")
}

fn ok(args: &[&str]) {
    let out = msrnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_stream(dir: &Path, n: usize) -> PathBuf {
    let tokens: Vec<u32> = (0..n as u32).map(|i| (i * 37 + 11) % 256).collect();
    let path = dir.join("stream.txt");
    TokenStream::write(&tokens, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn errors_are_one_line_and_nonzero() {
    for args in [
        &["perplexity", "--seed", "1"][..],
        &["simulate-trace", "--script", "x", "--policy", "window+4", "--k", "4"],
        &["simulate-trace", "--script", "x", "--policy", "lru", "--k", "4"],
        &["perplexity", "--bogus"],
        &["memory-report", "--state-sizes", "1", "--layers", "0"],
        &["simulate-trace", "--script", "/nonexistent/script.csv"],
    ] {
        let out = msrnn(args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
    let out = msrnn(&["simulate-trace", "--script", "x", "--policy", "lru", "--k", "4"]);
    assert!(String::from_utf8(out.stderr).unwrap().contains("tova-layer+i"));
}

#[test]
fn memory_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["memory-report", "--out-dir", s(dir.path()), "--budget", "80000000000"]);
    let csv = fs::read_to_string(dir.path().join("memory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "state_size,bytes,gigabytes,max_batch");
    assert_eq!(lines[1], "256,134217728,0.134218,596");
    assert_eq!(lines[5], "4096,2147483648,2.14748,37");
}

#[test]
fn full_capacity_perplexity_equals_topline() {
    let dir = tempfile::tempdir().unwrap();
    let stream = write_stream(dir.path(), 48);
    let top = dir.path().join("top");
    let capped = dir.path().join("capped");
    let common = ["--seed", "5", "--stream", s(&stream), "--chunk-len", "24"];
    let mut a = vec!["perplexity", "--out-dir", s(&top)];
    a.extend(common);
    ok(&a);
    let mut b = vec!["perplexity", "--out-dir", s(&capped), "--policy", "tova-layer", "--k", "24"];
    b.extend(common);
    ok(&b);
    for f in ["summary.json", "chunks.csv"] {
        assert_eq!(fs::read(top.join(f)).unwrap(), fs::read(capped.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(top.join("summary.json")).unwrap();
    assert!(summary.contains("\"token_count\": 46"), "{summary}");
}

#[test]
fn simulate_trace_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let spec = Some(PolicySpec::new(PolicyKind::TovaLayer, 4).unwrap());
    let script = ScriptedTrace::from_weights(spec, 30, 1, 2, |_, _, h, p| if p == 3 { 5.0 } else { 1.0 + ((p + h) % 3) as f64 })
        .unwrap();
    let path = dir.path().join("script.csv");
    script.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let out = dir.path().join("out");
    ok(&["simulate-trace", "--script", s(&path), "--policy", "tova-layer", "--k", "4", "--out-dir", s(&out)]);
    let mut expected = Vec::new();
    trace_driven_simulate(&script, spec).unwrap().write_csv(&mut expected).unwrap();
    assert_eq!(fs::read(out.join("trace.csv")).unwrap(), expected);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let stream = write_stream(dir.path(), 40);
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "# toy run\nseed = 3\nn_layers = 2\nstream = {}\npolicy = window\nk = 8\nchunk-len = 20\ntrace_out = true\n",
            stream.display()
        ),
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["perplexity", "--config", s(&conf), "--out-dir", s(&a)]);
    ok(&["perplexity", "--config", s(&conf), "--out-dir", s(&b), "--k", "4"]);
    assert!(a.join("trace_chunk1.csv").exists());
    assert_ne!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    let trace = fs::read_to_string(b.join("trace_chunk0.csv")).unwrap();
    // Two layers from the file, k = 4 from the flag: the first eviction is at step 4.
    assert!(trace.contains("\n4,1,3,evict,0,"), "{trace}");
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let stream = write_stream(dir.path(), 90);
    let run = |threads: &str, out: &Path| {
        ok(&[
            "perplexity-parallel", "--seed", "7", "--stream", s(&stream), "--chunk-len", "30", "--policy", "h2o-layer",
            "--k", "8", "--trace-out", "--threads", threads, "--out-dir", s(out),
        ]);
    };
    let (a, b) = (dir.path().join("one"), dir.path().join("four"));
    run("1", &a);
    run("4", &b);
    for f in ["summary.json", "chunks.csv", "trace_chunk0.csv", "trace_chunk2.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn saved_model_matches_seeded_model() {
    let dir = tempfile::tempdir().unwrap();
    let stream = write_stream(dir.path(), 20);
    ok(&["init-model", "--seed", "9", "--out-dir", s(dir.path())]);
    let model = dir.path().join("model.weights");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--seed", "9", "--stream", s(&stream), "--max-steps", "5", "--out-dir", s(&a)]);
    ok(&["generate", "--model", s(&model), "--stream", s(&stream), "--max-steps", "5", "--out-dir", s(&b)]);
    let generated = fs::read_to_string(a.join("generated.txt")).unwrap();
    assert_eq!(generated.lines().count(), 25);
    assert_eq!(generated, fs::read_to_string(b.join("generated.txt")).unwrap());
}

#[test]
fn truncate_keeps_first_k_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let stream = write_stream(dir.path(), 100);
    let out = dir.path().join("out");
    ok(&[
        "perplexity", "--seed", "1", "--stream", s(&stream), "--chunk-len", "100", "--policy", "window", "--k", "16",
        "--truncate", "--out-dir", s(&out),
    ]);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"token_count\": 15"), "{summary}");
}

#[test]
fn analyses_write_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.csv");
    ScriptedTrace::uniform(12, 1, 2, 3).write_csv(fs::File::create(&script).unwrap()).unwrap();
    ok(&["simulate-trace", "--script", s(&script), "--policy", "window", "--k", "3", "--out-dir", s(dir.path())]);
    let trace = dir.path().join("trace.csv");
    let tags = dir.path().join("tags.tsv");
    fs::write(&tags, "0\tDET\n1\tNOUN\n").unwrap();
    ok(&["analyze", "retention", "--trace", s(&trace), "--head", "1", "--out-dir", s(dir.path())]);
    ok(&["analyze", "lifetime", "--trace", s(&trace), "--out-dir", s(dir.path())]);
    ok(&["analyze", "tags", "--trace", s(&trace), "--tags", s(&tags), "--out-dir", s(dir.path())]);
    ok(&["analyze", "recent", "--trace", s(&trace), "--k", "3", "--out-dir", s(dir.path())]);
    assert_eq!(fs::read_to_string(dir.path().join("recent.csv")).unwrap(), "k,recent_proportion\n3,1\n");
    let pgm = fs::read(dir.path().join("retention.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n12 12\n255\n"));
    let table = fs::read_to_string(dir.path().join("tags.csv")).unwrap();
    assert!(table.ends_with("Avg.,2.75,12\n"), "{table}");
    let out = msrnn(&["analyze", "retention", "--trace", s(&trace), "--head", "5", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
}
