//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use selfdebug_core::collector::{CollectionStats, SftFormat, SftRecord, Trajectory};
use selfdebug_core::corpus::{load_corpus, CorpusFormat, ProblemSet};
use selfdebug_core::eval::{pass_at_k, TaskOutcome};
use selfdebug_core::gateway::parse_response;
use selfdebug_core::ppo::{advantages, assemble_rewards, deltas, RewardAssembly, SegmentLayout};
use selfdebug_core::rewards::{reward_explanation, reward_refinement};
use selfdebug_core::sandbox::{classify, Executor, Limits, ScriptedExecutor, ShimExecutor, Verdict};
use selfdebug_core::util::read_jsonl;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy() -> PathBuf {
    root().join("fixtures/toy")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

// 1. Reward endpoints, exact.
fn reward_endpoints() -> Outcome {
    let started = Instant::now();
    for (s_cb, s_ut, want) in [(1.0, 1.0, 5.0), (0.0, 0.0, -5.0), (0.5, 0.5, 0.0)] {
        let got = reward_refinement(s_cb, s_ut).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("refinement({s_cb}, {s_ut}) = {got}, want {want}"))?;
    }
    for (s, want) in [(0.4, -5.0), (0.7, 0.0), (1.0, 5.0)] {
        let got = reward_explanation(s).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("explanation({s}) = {got}, want {want}"))?;
    }
    within(started.elapsed(), Duration::from_secs(1))?;
    Ok("6 endpoints exact".into())
}

/// Probability that a uniformly random k-subset of n samples, the first c
/// of which are correct, contains a correct one. Counted over all subsets.
fn pass_at_k_by_enumeration(n: usize, c: usize, k: usize) -> f64 {
    let correct_mask: u32 = (1u32 << c) - 1;
    let (mut hits, mut total) = (0u64, 0u64);
    for subset in 0u32..(1u32 << n) {
        if subset.count_ones() as usize == k {
            total += 1;
            if subset & correct_mask != 0 {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

// 2. pass@k against exhaustive enumeration.
fn pass_at_k_exhaustive() -> Outcome {
    let started = Instant::now();
    let mut cases = 0;
    let mut worst = 0.0f64;
    for n in 1..=12 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                let want = pass_at_k_by_enumeration(n, c, k);
                worst = worst.max((got - want).abs());
                ensure((got - want).abs() <= 1e-9, || {
                    format!("n={n} c={c} k={k}: {got} vs {want}")
                })?;
                cases += 1;
            }
        }
    }
    within(started.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{cases} cases, max error {worst:.1e}"))
}

fn advantages_of(layout: SegmentLayout, r_expl: f64, r_code: f64, kl: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    let r_expl = (layout.len_explanation > 0).then_some(r_expl);
    let rewards = assemble_rewards(layout, r_expl, r_code, kl, &RewardAssembly::default()).unwrap();
    advantages(&deltas(&rewards, values, gamma).unwrap(), gamma)
}

// 3. Advantage recursion and segment isolation.
fn advantage_checks() -> Outcome {
    let started = Instant::now();
    let mut rng = rand::rngs::StdRng::seed_from_u64(20240611);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let len = rng.gen_range(1..64);
        let gamma: f64 = if case % 10 == 0 { 1.0 } else { rng.gen_range(0.0..1.0) };
        let delta: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let got = advantages(&delta, gamma);
        for (t, a) in got.iter().enumerate() {
            let direct: f64 = (t..len).map(|l| gamma.powi((l - t) as i32) * delta[l]).sum();
            let err = (a - direct).abs();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("case {case} t={t}: {a} vs {direct}"))?;
        }
    }

    let h = 1e-3;
    let mut probes = 0;
    for case in 0..200 {
        let e = rng.gen_range(1..12);
        let c = rng.gen_range(1..20);
        let total = e + c;
        let layout = SegmentLayout {
            len_explanation: e,
            len_refinement: c,
        };
        let gamma: f64 = rng.gen_range(0.5..1.0);
        let kl: Vec<f64> = (0..total).map(|_| rng.gen_range(0.0..0.3)).collect();
        let mut values: Vec<f64> = (0..total).map(|_| rng.gen_range(-1.0..1.0)).collect();
        values.push(0.0);
        let (r_expl, r_code) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let base = advantages_of(layout, r_expl, r_code, &kl, &values, gamma);
        let d_expl = advantages_of(layout, r_expl + h, r_code, &kl, &values, gamma);
        let d_code = advantages_of(layout, r_expl, r_code + h, &kl, &values, gamma);
        for i in 0..total {
            let t = i + 1;
            let g_expl = (d_expl[i] - base[i]) / h;
            let g_code = (d_code[i] - base[i]) / h;
            let want_expl = if t > e { 0.0 } else { gamma.powi((e - t) as i32) };
            let want_code = gamma.powi((total - t) as i32);
            ensure((g_expl - want_expl).abs() < 1e-6, || {
                format!("case {case} t={t} |e|={e}: dA/dr_expl {g_expl} vs {want_expl}")
            })?;
            ensure((g_code - want_code).abs() < 1e-6, || {
                format!("case {case} t={t} T={total}: dA/dr_code {g_code} vs {want_code}")
            })?;
            probes += 1;
        }
    }
    within(started.elapsed(), Duration::from_secs(10))?;
    Ok(format!("1000 cases max error {worst:.1e}; {probes} finite-difference probes"))
}

// 4. Refinement rates from the published row counts.
fn refinement_rates() -> Outcome {
    let rows = [
        ("MBPP", 9500, 4706, 4794, 2203, 45.95),
        ("APPS", 44108, 27736, 16372, 6419, 39.21),
        ("CodeContest", 51134, 31520, 19614, 5113, 26.07),
    ];
    let mut shown = Vec::new();
    for (name, unique, correct, wrong, refined, rate) in rows {
        let s = CollectionStats::from_counts(correct, wrong, refined);
        ensure(s.n_unique == unique, || format!("{name}: unique {} vs {unique}", s.n_unique))?;
        let pct = 100.0 * s.refinement_rate.ok_or(format!("{name}: no rate"))?;
        ensure((pct - rate).abs() <= 0.01, || format!("{name}: {pct:.4}% vs {rate}%"))?;
        shown.push(format!("{name} {pct:.2}%"));
    }
    Ok(shown.join(", "))
}

fn selfdebug(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_selfdebug"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "selfdebug {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const COLLECT_FILES: [&str; 7] = [
    "attempts.jsonl",
    "trajectories.jsonl",
    "rl_pool.jsonl",
    "failures.jsonl",
    "stats.json",
    "validation.jsonl",
    "sft.jsonl",
];

fn manifest_without_timings(dir: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v.as_object_mut().ok_or("manifest is not an object")?.remove("stage_timings");
    Ok(v)
}

fn python3_available() -> bool {
    Command::new("python3")
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn turn_spans(rendered: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(open) = rendered[pos..].find("<|") {
        let open = pos + open;
        let close = open + rendered[open..].find("|>\n").expect("turn header");
        let role = rendered[open + 2..close].to_string();
        let start = close + 3;
        let end = start + rendered[start..].find("<|end|>\n").expect("turn end");
        out.push((role, start, end));
        pos = end + "<|end|>\n".len();
    }
    out
}

// 5. Collect and build-sft are deterministic and the data is verified.
fn pipeline_determinism(scratch: &Path) -> Outcome {
    let started = Instant::now();
    let config = toy().join("config.json");
    let config = config.to_str().unwrap();
    let runs = [scratch.join("run-a"), scratch.join("run-b")];
    for dir in &runs {
        let d = dir.to_str().unwrap();
        selfdebug(&["collect", "--config", config, "--out", d])?;
        selfdebug(&["build-sft", "--config", config, "--out", d])?;
    }
    for f in COLLECT_FILES {
        let a = std::fs::read(runs[0].join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(runs[1].join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    ensure(
        manifest_without_timings(&runs[0])? == manifest_without_timings(&runs[1])?,
        || "manifests differ outside stage_timings".into(),
    )?;

    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(toy().join("expected.json")).unwrap()).unwrap();
    let stats: Value =
        serde_json::from_str(&std::fs::read_to_string(runs[0].join("stats.json")).unwrap()).unwrap();
    for key in ["n_unique", "n_correct", "n_wrong", "n_correct_refinement"] {
        ensure(stats[key] == expected["collect"][key], || {
            format!("{key}: {} vs designed {}", stats[key], expected["collect"][key])
        })?;
    }

    let corpus: ProblemSet =
        load_corpus(&toy().join("toy.jsonl"), CorpusFormat::CanonicalJsonl).map_err(|e| e.to_string())?;
    let trajectories: Vec<Trajectory> =
        read_jsonl(&runs[0].join("trajectories.jsonl")).map_err(|e| e.to_string())?;
    let by_id: BTreeMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let records: Vec<SftRecord> = read_jsonl(&runs[0].join("sft.jsonl")).map_err(|e| e.to_string())?;

    let (executor, via): (Arc<dyn Executor>, &str) = if python3_available() {
        let script = root().join("fixtures/shim/mini_runner.py");
        let exec = ShimExecutor::new(vec!["python3".into(), script.display().to_string()]).unwrap();
        (Arc::new(exec), "python runner")
    } else {
        let exec = ScriptedExecutor::from_file(&toy().join("verdicts.jsonl")).map_err(|e| e.to_string())?;
        (Arc::new(exec), "scripted verdicts (python3 missing)")
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    let limits = Limits::default();
    let mut n_refinements = 0;
    for (i, r) in records.iter().enumerate() {
        if r.format == SftFormat::Generate {
            continue;
        }
        n_refinements += 1;
        let t = by_id.get(r.provenance.as_str()).ok_or(format!("record {i}: unknown trajectory"))?;
        let problem = corpus.get(&t.problem_id).ok_or(format!("record {i}: unknown problem"))?;
        ensure(r.mask_spans.len() == 1, || format!("record {i}: {} spans", r.mask_spans.len()))?;
        let [s, e] = r.mask_spans[0];
        let turns = turn_spans(&r.rendered);
        let (role, a_start, a_end) = turns.last().cloned().ok_or(format!("record {i}: no turns"))?;
        ensure(role == "assistant" && s == a_start && e == a_end, || {
            format!("record {i}: span {s}..{e} is not the final answer")
        })?;
        let wrong_turns: Vec<_> = turns[..turns.len() - 1]
            .iter()
            .filter(|(role, a, b)| role == "assistant" && r.rendered[*a..*b].contains(&t.wrong.code))
            .collect();
        ensure(wrong_turns.len() == 1, || format!("record {i}: wrong-solution turn not found"))?;
        let (_, wa, wb) = wrong_turns[0];
        ensure(*wb <= s || *wa >= e, || format!("record {i}: span overlaps the wrong solution"))?;

        let code = parse_response(&r.masked_text()).map_err(|e| format!("record {i}: {e}"))?.code;
        let report = rt
            .block_on(executor.execute(&code, problem, &limits))
            .map_err(|e| format!("record {i}: {e}"))?;
        ensure(classify(&report) == Verdict::Correct, || {
            format!("record {i}: refinement fails on re-execution: {report:?}")
        })?;
    }
    ensure(n_refinements > 0, || "no refinement records".into())?;
    within(started.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "{} files identical; {n_refinements} refinements re-run via {via}",
        COLLECT_FILES.len() + 1
    ))
}

// 6. CodeBLEU golden pairs.
fn codebleu_golden() -> Outcome {
    let path = root().join("crates/codebleu/tests/data/golden_pairs.jsonl");
    let rows: Vec<Value> = read_jsonl(&path).map_err(|e| e.to_string())?;
    ensure(rows.len() == 20, || format!("{} golden pairs", rows.len()))?;
    let w = codebleu::CodeBleuWeights::default();
    let mut worst = 0.0f64;
    for g in &rows {
        let s = codebleu::codebleu(g["candidate"].as_str().unwrap(), g["reference"].as_str().unwrap(), &w);
        for (got, key) in [
            (s.codebleu, "codebleu"),
            (s.ngram_match, "ngram_match"),
            (s.weighted_ngram_match, "weighted_ngram_match"),
            (s.syntax_match, "syntax_match"),
            (s.dataflow_match, "dataflow_match"),
        ] {
            let want = g[key].as_f64().unwrap();
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() < 1e-3, || format!("{} {key}: {got} vs {want}", g["id"]))?;
        }
    }
    Ok(format!("20 pairs, max error {worst:.1e}"))
}

// 7. Multi-round evaluation follows the designed fix pattern.
fn multi_round_eval(scratch: &Path) -> Outcome {
    let out = scratch.join("eval");
    let config = toy().join("config.json");
    selfdebug(&["evaluate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--rounds", "3"])?;
    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(toy().join("expected.json")).unwrap()).unwrap();
    let rows: Vec<Value> = read_jsonl(&out.join("eval_outcomes.jsonl")).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for row in &rows {
        let mode = row["mode"].as_str().unwrap();
        let o: TaskOutcome = serde_json::from_value(row["outcome"].clone()).map_err(|e| e.to_string())?;
        ensure(!o.incomplete, || format!("{mode} {}: incomplete", o.problem_id))?;
        ensure(o.c_by_round.len() == 4, || format!("{mode} {}: {} rounds", o.problem_id, o.c_by_round.len()))?;
        ensure(o.c_by_round.windows(2).all(|w| w[0] <= w[1]), || {
            format!("{mode} {}: {:?} decreases", o.problem_id, o.c_by_round)
        })?;
        let want: Vec<usize> = serde_json::from_value(expected["eval"][mode][&o.problem_id].clone())
            .map_err(|e| format!("{mode} {}: {e}", o.problem_id))?;
        ensure(o.c_by_round == want, || {
            format!("{mode} {}: {:?} vs designed {want:?}", o.problem_id, o.c_by_round)
        })?;
        checked += 1;
    }
    ensure(checked == 20, || format!("{checked} outcomes, want 20"))?;
    Ok(format!("{checked} task chains match over 3 rounds"))
}

fn main() {
    // `cargo test -- <filter>` passes arguments; the suite always runs whole.
    let scratch = tempfile::tempdir().expect("scratch dir");
    let criteria: Vec<Criterion> = vec![
        ("1 reward formula endpoints", Box::new(reward_endpoints)),
        ("2 pass@k vs subset enumeration", Box::new(pass_at_k_exhaustive)),
        ("3 advantage recursion and segment isolation", Box::new(advantage_checks)),
        ("4 refinement rates from row counts", Box::new(refinement_rates)),
        ("5 collect/build-sft determinism", Box::new(|| pipeline_determinism(scratch.path()))),
        ("6 CodeBLEU golden pairs", Box::new(codebleu_golden)),
        ("7 multi-round c_by_round pattern", Box::new(|| multi_round_eval(scratch.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {name} ({took:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({took:.2}s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
