use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfdebug"))
        .args(args)
        .output()
        .unwrap()
}

fn json_stdout(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["collect"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"corpus": {"path": "x"}, "model": "m"}"#).unwrap();
    let o = run(&["collect", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn backend_failure_on_every_problem_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(toy().join("config.json")).unwrap()).unwrap();
    let t = toy();
    cfg["corpus"]["path"] = p(&t.join("toy.jsonl")).into();
    cfg["executor"]["verdicts"] = p(&t.join("verdicts.jsonl")).into();
    cfg["shots"] = p(&t.join("fewshot.jsonl")).into();
    cfg["backend"]["transcript"] = p(&empty).into();
    let path = dir.path().join("c.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = run(&["collect", "--config", p(&path), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["evaluate", "--config", p(&path), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unchanged_inputs_reuse_collect_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");
    let first = json_stdout(&run(&["collect", "--config", p(&cfg), "--out", p(dir.path())]));
    assert_eq!(first["reused"], false);
    let second = json_stdout(&run(&["collect", "--config", p(&cfg), "--out", p(dir.path())]));
    assert_eq!(second["reused"], true);
    assert_eq!(second["stats"], first["stats"]);

    // A modified output forces a rerun.
    std::fs::write(dir.path().join("stats.json"), "{}").unwrap();
    let third = json_stdout(&run(&["collect", "--config", p(&cfg), "--out", p(dir.path())]));
    assert_eq!(third["reused"], false);
    let forced = json_stdout(&run(&["collect", "--config", p(&cfg), "--out", p(dir.path()), "--force"]));
    assert_eq!(forced["reused"], false);
}

#[test]
fn score_and_report_after_collect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");
    json_stdout(&run(&["collect", "--config", p(&cfg), "--out", p(dir.path())]));
    let scored = json_stdout(&run(&["score", "--config", p(&cfg), "--out", p(dir.path())]));
    assert!(scored["scored"].as_u64().unwrap() > 0);
    let rewards = std::fs::read_to_string(dir.path().join("rewards.jsonl")).unwrap();
    for line in rewards.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if let Some(r) = v["r_code"].as_f64() {
            assert!((-5.0..=5.0).contains(&r));
        }
    }

    let o = run(&["evaluate", "--config", p(&cfg), "--out", p(dir.path()), "--rounds", "1", "--mode", "refine"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let md = run(&["report", p(&dir.path().join("eval.json"))]);
    let text = String::from_utf8(md.stdout).unwrap();
    assert!(text.starts_with("| Benchmark | Setting | pass@1 | pass@4 | Refine rate |"));
    assert!(text.contains("| toy | Refine |"));
    assert!(!text.contains("Expl. + Refine"));
}

#[test]
fn ppo_advantage_batch() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("batch.jsonl");
    let output = dir.path().join("out.jsonl");
    let sample = serde_json::json!({
        "sample_id": "s1",
        "layout": {"len_explanation": 1, "len_refinement": 2},
        "logprobs_new": [-1.0, -1.0, -1.0],
        "logprobs_old": [-1.0, -1.0, -1.0],
        "values": [0.0, 0.0, 0.0, 0.0],
        "r_expl": 2.0,
        "r_code": 4.0
    });
    std::fs::write(&input, format!("{sample}\n")).unwrap();
    let o = run(&["ppo-advantage", "--input", p(&input), "--output", p(&output), "--gamma", "0.5"]);
    assert_eq!(json_stdout(&o)["samples"], 1);
    let out: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&output).unwrap().trim()).unwrap();
    // Zero KL and zero values: rewards are the raw bonuses and
    // A = [2 + 0.25 * 4, 0.5 * 4, 4].
    assert_eq!(out["rewards"], serde_json::json!([2.0, 0.0, 4.0]));
    assert_eq!(out["advantages"], serde_json::json!([3.0, 2.0, 4.0]));

    std::fs::write(&input, "{\"sample_id\": \"bad\"}\n").unwrap();
    let o = run(&["ppo-advantage", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn import_mbpp_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("mbpp.jsonl");
    let row = serde_json::json!({
        "task_id": 2, "text": "Add.", "code": "def add(a, b):\n    return a + b",
        "test_list": ["assert add(1, 1) == 2"]
    });
    std::fs::write(&src, format!("{row}\n")).unwrap();
    let dst = dir.path().join("canon.jsonl");
    let o = run(&["import-corpus", "--input", p(&src), "--format", "mbpp-jsonl", "--output", p(&dst)]);
    assert_eq!(json_stdout(&o)["problems"], 1);
    assert!(std::fs::read_to_string(&dst).unwrap().contains("\"mbpp/2\""));
}

fn python3() -> bool {
    Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success())
}

/// Toy corpus with the reference solution of `toy/p00` broken.
fn broken_corpus(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(toy().join("toy.jsonl")).unwrap();
    let mut lines: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[0]["reference_solutions"] = serde_json::json!(["def add(a, b):\n    return a - b"]);
    let path = dir.join("broken.jsonl");
    let body: String = lines.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(&path, body).unwrap();
    path
}

fn validation(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("validation.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn invalid_problems_are_flagged_and_excluded_on_request() {
    if !python3() {
        eprintln!("python3 not found; skipped");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let corpus = broken_corpus(dir.path());
    let runner = toy().join("../shim/mini_runner.py");
    let shim = format!("python3 {}", p(&runner));
    let cfg = toy().join("config.json");

    let kept = dir.path().join("kept");
    let o = run(&["collect", "--config", p(&cfg), "--out", p(&kept), "--corpus", p(&corpus), "--shim", &shim]);
    let kept_stats = json_stdout(&o)["stats"].clone();
    let reports = validation(&kept);
    assert_eq!(reports.len(), 10);
    let bad: Vec<_> = reports.iter().filter(|r| r["ok"] == false).collect();
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0]["problem_id"], "toy/p00");
    let attempts = std::fs::read_to_string(kept.join("attempts.jsonl")).unwrap();
    assert!(attempts.contains("\"toy/p00\""));

    let dropped = dir.path().join("dropped");
    let o = run(&[
        "collect", "--config", p(&cfg), "--out", p(&dropped), "--corpus", p(&corpus), "--shim", &shim,
        "--exclude-invalid",
    ]);
    let dropped_stats = json_stdout(&o)["stats"].clone();
    assert_eq!(validation(&dropped).len(), 10);
    let attempts = std::fs::read_to_string(dropped.join("attempts.jsonl")).unwrap();
    assert!(!attempts.contains("\"toy/p00\""));
    assert_ne!(kept_stats, dropped_stats);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");
    let o = run(&[
        "evaluate", "--config", p(&cfg), "--out", p(dir.path()), "--rounds", "1", "--mode", "refine", "--k", "1,2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let md = String::from_utf8(run(&["report", p(&dir.path().join("eval.json"))]).stdout).unwrap();
    assert!(md.starts_with("| Benchmark | Setting | pass@1 | pass@2 | Refine rate |"), "{md}");

    // A k above the sample count is rejected before any work.
    let o = run(&["evaluate", "--config", p(&cfg), "--out", p(dir.path()), "--k", "1,99"]);
    assert_eq!(o.status.code(), Some(1));

    // An unknown corpus format is a validation error.
    let o = run(&["collect", "--config", p(&cfg), "--out", p(dir.path()), "--corpus-format", "csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus format"));

    // Without a config file the flags must describe the whole run.
    let o = run(&["collect", "--out", p(dir.path()), "--model", "m"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");
    let o = Command::new(env!("CARGO_BIN_EXE_selfdebug"))
        .args(["evaluate", "--config", p(&cfg), "--out", p(dir.path()), "--rounds", "0"])
        .args(["--endpoint", "http://127.0.0.1:9", "--model", "other"])
        .env("LLM_API_KEY", "test-key")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
