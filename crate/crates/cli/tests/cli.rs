use std::path::Path;
use std::process::{Command, Output};

fn gemfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gemfilter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn line<'a>(text: &'a str, prefix: &str) -> &'a str {
    text.lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix:?} line in {text}"))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn cost_table_reports_m_over_r() {
    let out = gemfilter(&["cost", "--m", "32", "--r", "13"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(line(&text, "prompt time standard:gemfilter").contains("= 2.4615"), "{text}");
    for method in ["standard", "snapkv", "h2o", "gemfilter"] {
        assert!(text.lines().any(|l| l.starts_with(method)), "{method} missing");
    }
}

#[test]
fn cost_json_is_parseable() {
    let out = gemfilter(&["cost", "--m", "8", "--r", "2", "--n", "1024", "--k", "64", "--t", "4", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["params"]["m"], 8);
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn gemfilter_with_full_budget_matches_full() {
    let ids: Vec<u32> = (0..40).map(|i| (i * 37 + 11) % 256).collect();
    let ids = serde_json::to_string(&ids).unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["generate", "--seed", "3", "--prompt-ids", ids.as_str(), "-t", "12"];
        args.extend_from_slice(extra);
        let out = gemfilter(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        line(&stdout(&out), "tokens:").to_string()
    };
    let full = run(&["--strategy", "full"]);
    let gem = run(&["--strategy", "gemfilter", "--select-k", "40", "--filter-layer", "1"]);
    assert_eq!(full, gem);
}

#[test]
fn select_shows_needle_on_copy_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("copy.gfm");
    assert!(gemfilter(&["make-model", "copy", "--layers", "2", "--out", path(&model)]).status.success());
    let prompt = format!("{}XXXXXXXX{}X", "qwertyuiopasdfgh".repeat(8), "zxcvbnmlkjhg".repeat(6));
    let out = gemfilter(&[
        "select", "--model", path(&model), "--prompt", &prompt, "--select-k", "12", "--filter-layer", "1",
    ]);
    assert!(out.status.success());
    assert!(line(&stdout(&out), "selected:").contains("XXXXXXXX"));
}

#[test]
fn exit_codes() {
    assert_eq!(gemfilter(&["cost", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gemfilter(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gemfilter(&["--help"]).status.code(), Some(0));

    let out = gemfilter(&["generate", "--prompt-ids", "[1, 2, 999]"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("contract violation"));

    assert_eq!(gemfilter(&["generate"]).status.code(), Some(1));
    assert_eq!(gemfilter(&["generate", "--model", "/nonexistent.gfm", "--prompt", "a"]).status.code(), Some(1));
}

#[test]
fn metrics_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("rand.gfm");
    assert!(gemfilter(&["make-model", "random", "--layers", "3", "--heads", "4", "--kv-heads", "2", "--out", path(&model)])
        .status
        .success());
    let prompt = "the quick brown fox jumps over the lazy dog ".repeat(6);
    let record = |threads: &str| {
        let out_path = dir.path().join(format!("m{threads}.ndjson"));
        let out = Command::new(env!("CARGO_BIN_EXE_gemfilter"))
            .env("RAYON_NUM_THREADS", threads)
            .args([
                "generate", "--model", path(&model), "--prompt", &prompt, "--strategy", "snapkv", "--select-k", "64",
                "--window", "8", "--recent", "8", "-t", "6", "--no-timing", "--metrics-out", path(&out_path),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read(&out_path).unwrap()
    };
    let one = record("1");
    assert_eq!(one, record("4"));
    let v: serde_json::Value = serde_json::from_slice(&one).unwrap();
    assert_eq!(v["run_id"], "snapkv-n264-k64-t6-r--seed0");
    assert_eq!(v["wall_times"]["prompt"], 0.0);
}

#[test]
fn needle_sweep_reports_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("needle.ndjson");
    let out = gemfilter(&[
        "needle", "--haystack", "512", "--depth", "75", "--select-k", "32", "--r-sweep", "--metrics-out",
        path(&metrics),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("# coverage"));
    let records: Vec<serde_json::Value> = std::fs::read_to_string(&metrics)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    for r in &records {
        assert_eq!(r["selection"]["coverage"], 1.0);
        assert_eq!(r["selection"]["min_distance"], 0);
    }

    let single = stdout(&gemfilter(&["needle", "--haystack", "512", "--select-k", "32", "--filter-layer", "1"]));
    assert_eq!(line(&single, "generation_match:"), "generation_match: true");
}

#[test]
fn bench_counters_match_table() {
    let out = gemfilter(&["bench", "--n", "256", "--select-k", "32", "-t", "4", "--filter-layer", "2", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.len(), 4 * 2 * 9);
    assert!(items.iter().all(|i| i["pass"] == true));
    assert_eq!(v["wall_ratio"]["pass"], serde_json::Value::Null);
}
