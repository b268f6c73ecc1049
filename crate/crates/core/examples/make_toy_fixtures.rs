//! Regenerates the bundled toy corpus, mock transcript and verdict table.
//!
//! Every candidate is executed once through a real runner and the report
//! is stored as a scripted verdict, so replays match real execution.
//!
//!     cargo run -p selfdebug-core --example make_toy_fixtures -- \
//!         fixtures/toy fixtures/shim/mini_runner.py

use std::collections::BTreeMap;
use std::path::PathBuf;

use selfdebug_core::collector::derive_feedback;
use selfdebug_core::corpus::{save_corpus, Problem, ProblemSet, Source, TestCase};
use selfdebug_core::gateway::{
    fence, parse_response, render_debug_prompt, render_initial_prompt, PromptMode, Shot,
    Transcript,
};
use selfdebug_core::sandbox::{
    classify, ExecutionReport, Executor, Limits, ScriptedVerdict, ShimExecutor, Verdict,
};
use selfdebug_core::util::{sha256_hex, to_jsonl, write_atomic};

struct Spec {
    name: &'static str,
    args: &'static str,
    desc: &'static str,
    tests: [&'static str; 3],
    expr: &'static str,
    /// Wrong expression; `{j}` makes each variant distinct.
    wrong: &'static str,
}

const SPECS: [Spec; 10] = [
    Spec { name: "add", args: "a, b", desc: "returns the sum of a and b", tests: ["assert add(1, 2) == 3", "assert add(-1, 1) == 0", "assert add(10, 5) == 15"], expr: "a + b", wrong: "a - b + {j}" },
    Spec { name: "subtract", args: "a, b", desc: "returns a minus b", tests: ["assert subtract(5, 3) == 2", "assert subtract(0, 4) == -4", "assert subtract(7, 7) == 0"], expr: "a - b", wrong: "b - a + {j}" },
    Spec { name: "multiply", args: "a, b", desc: "returns the product of a and b", tests: ["assert multiply(2, 3) == 6", "assert multiply(-2, 4) == -8", "assert multiply(0, 9) == 0"], expr: "a * b", wrong: "a + b + {j}" },
    Spec { name: "square", args: "x", desc: "returns x squared", tests: ["assert square(3) == 9", "assert square(-4) == 16", "assert square(0) == 0"], expr: "x * x", wrong: "x * 2 + {j}" },
    Spec { name: "is_even", args: "n", desc: "returns True when n is even", tests: ["assert is_even(4) is True", "assert is_even(7) is False", "assert is_even(0) is True"], expr: "n % 2 == 0", wrong: "n % 2 == 1 and {j} > 0" },
    Spec { name: "max_of_two", args: "a, b", desc: "returns the larger of a and b", tests: ["assert max_of_two(3, 9) == 9", "assert max_of_two(8, 2) == 8", "assert max_of_two(-1, -5) == -1"], expr: "a if a > b else b", wrong: "min(a, b) - {j}" },
    Spec { name: "reverse_string", args: "s", desc: "returns s reversed", tests: ["assert reverse_string('abc') == 'cba'", "assert reverse_string('') == ''", "assert reverse_string('ab') == 'ba'"], expr: "s[::-1]", wrong: "s + '{j}'" },
    Spec { name: "count_vowels", args: "s", desc: "counts the lowercase vowels in s", tests: ["assert count_vowels('hello') == 2", "assert count_vowels('xyz') == 0", "assert count_vowels('aeiou') == 5"], expr: "sum(1 for ch in s if ch in 'aeiou')", wrong: "len(s) + {j}" },
    Spec { name: "factorial", args: "n", desc: "returns n factorial", tests: ["assert factorial(0) == 1", "assert factorial(4) == 24", "assert factorial(5) == 120"], expr: "1 if n <= 1 else n * factorial(n - 1)", wrong: "n * 100 + {j}" },
    Spec { name: "fib", args: "n", desc: "returns the n-th Fibonacci number with fib(0) = 0", tests: ["assert fib(0) == 0", "assert fib(1) == 1", "assert fib(10) == 55"], expr: "n if n < 2 else fib(n - 1) + fib(n - 2)", wrong: "n * 100 + {j}" },
];

#[derive(Clone, Copy, PartialEq)]
enum Extra {
    Correct,
    Wrong,
    NoCode,
}

#[derive(Clone, Copy, PartialEq)]
enum Style {
    Plain,
    Compile,
    Runtime,
    /// Same code as an earlier sample up to a comment.
    DupOf(usize),
}

#[derive(Clone, Copy)]
enum Sample {
    Correct,
    NoCode,
    /// Round at which the explain and refine chains fix the sample.
    Wrong { style: Style, explain: Option<usize>, refine: Option<usize>, extra: Extra },
}

fn w(explain: Option<usize>, refine: Option<usize>, extra: Extra) -> Sample {
    Sample::Wrong { style: Style::Plain, explain, refine, extra }
}

fn styled(style: Style, explain: Option<usize>, refine: Option<usize>, extra: Extra) -> Sample {
    Sample::Wrong { style, explain, refine, extra }
}

fn design() -> Vec<Vec<Sample>> {
    use Extra::*;
    use Sample::Correct as C;
    vec![
        vec![C, C, C, C],
        vec![C, C, C, w(Some(1), Some(2), Wrong)],
        vec![C, C, w(Some(1), Some(1), Correct), w(Some(2), Some(3), Wrong)],
        vec![C, w(Some(1), None, Wrong), w(Some(3), None, Wrong), w(None, None, Correct)],
        vec![w(Some(1), Some(1), Wrong), w(Some(1), Some(2), NoCode), w(Some(2), Some(3), Correct), w(None, None, Wrong)],
        vec![C, C, w(Some(2), Some(2), Wrong), Sample::NoCode],
        vec![C, w(Some(1), Some(1), Wrong), styled(Style::DupOf(1), Some(1), Some(1), Wrong), C],
        vec![w(Some(1), Some(2), Wrong), w(Some(2), None, Wrong), styled(Style::Compile, Some(1), Some(1), Wrong), styled(Style::Runtime, None, None, Correct)],
        vec![C, C, C, w(None, None, NoCode)],
        vec![C, w(Some(3), Some(3), Wrong), w(None, Some(2), Wrong), w(Some(1), None, Wrong)],
    ]
}

struct Gen<'a> {
    spec: &'a Spec,
    next_wrong: usize,
    next_correct: usize,
}

impl Gen<'_> {
    fn def(&self, body: &str) -> String {
        format!("def {}({}):\n    {body}", self.spec.name, self.spec.args)
    }
    fn correct(&mut self) -> String {
        let v = self.next_correct;
        self.next_correct += 1;
        let e = self.spec.expr;
        match v {
            0 => self.def(&format!("return {e}")),
            1 => self.def(&format!("result = {e}\n    return result")),
            2 => self.def(&format!("return ({e})")),
            _ => self.def(&format!("out_{v} = {e}\n    return out_{v}")),
        }
    }
    fn wrong(&mut self, style: Style) -> String {
        self.next_wrong += 1;
        let expr = self.spec.wrong.replace("{j}", &self.next_wrong.to_string());
        match style {
            Style::Plain | Style::DupOf(_) => self.def(&format!("return {expr}")),
            Style::Compile => format!("def {}({})\n    return {expr}", self.spec.name, self.spec.args),
            Style::Runtime => self.def(&format!("return missing_helper_{}({})", self.next_wrong, self.spec.args)),
        }
    }
}

fn initial_text(code: &str) -> String {
    format!("Here is a solution.\n\n{}", fence(code))
}

fn refinement_text(mode: PromptMode, code: &str, fixed: bool) -> String {
    match mode {
        PromptMode::Refine => fence(code),
        PromptMode::ExplainThenRefine => {
            let why = if fixed {
                "The previous code computed the wrong expression, so the failing assertion compared against a different value. This version returns the intended result."
            } else {
                "The previous code mishandled the inputs. This version adjusts the arithmetic."
            };
            format!("{why}\n\n{}", fence(code))
        }
    }
}

struct Recorder {
    exec: ShimExecutor,
    limits: Limits,
    verdicts: BTreeMap<(String, String), ScriptedVerdict>,
}

impl Recorder {
    async fn run(&mut self, p: &Problem, code: &str, expect: Verdict) -> ExecutionReport {
        let report = self.exec.execute(code, p, &self.limits).await.expect("runner works");
        assert_eq!(classify(&report), expect, "{}: unexpected verdict for\n{code}\n{report:?}", p.id);
        self.verdicts.insert(
            (p.id.clone(), sha256_hex(code)),
            ScriptedVerdict {
                problem_id: p.id.clone(),
                code_sha256: sha256_hex(code),
                status: report.status,
                per_test: report.per_test.clone(),
                error: report.error.clone(),
            },
        );
        report
    }
}

fn code_of(raw: &str) -> String {
    parse_response(raw).expect("scripted response has code").code
}

#[tokio::main]
async fn main() {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/toy".into()));
    let runner = args.next().unwrap_or_else(|| "fixtures/shim/mini_runner.py".into());
    let runner = std::fs::canonicalize(&runner).expect("runner script exists");
    let mut rec = Recorder {
        exec: ShimExecutor::new(vec!["python3".into(), runner.display().to_string()]).unwrap(),
        limits: Limits { per_test_timeout_ms: 2000, ..Limits::default() },
        verdicts: BTreeMap::new(),
    };

    let problems: Vec<Problem> = SPECS
        .iter()
        .enumerate()
        .map(|(i, s)| Problem {
            id: format!("toy/p{i:02}"),
            description: format!("Write a function {}({}) that {}.", s.name, s.args, s.desc),
            tests: s.tests.iter().map(|t| TestCase::assertion(*t)).collect(),
            reference_solutions: vec![format!("def {}({}):\n    return {}", s.name, s.args, s.expr)],
            entry_point: Some(s.name.to_string()),
            source: Source::Custom,
        })
        .collect();
    let set = ProblemSet { name: "toy".into(), schema_version: 1, problems };
    let shots = vec![Shot {
        description: "Write a function absolute(x) that returns the absolute value of x.".into(),
        tests: vec!["assert absolute(-3) == 3".into(), "assert absolute(2) == 2".into()],
        solution: "def absolute(x):\n    return -x if x < 0 else x".into(),
    }];

    let mut transcript = Transcript::default();
    let mut expected_eval: BTreeMap<&str, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    let (mut n_unique, mut n_correct, mut n_wrong, mut n_refined) = (0, 0, 0, 0);
    const ROUNDS: usize = 3;

    for ((p, spec), samples) in set.problems.iter().zip(SPECS.iter()).zip(design()) {
        for r in &p.reference_solutions {
            rec.run(p, r, Verdict::Correct).await;
        }
        let mut g = Gen { spec, next_wrong: 0, next_correct: 0 };
        let mut initial_raw = Vec::new();
        let mut codes: Vec<Option<String>> = Vec::new();
        for s in &samples {
            let raw = match *s {
                Sample::Correct => initial_text(&g.correct()),
                Sample::NoCode => "I am not able to solve this one.".to_string(),
                Sample::Wrong { style: Style::DupOf(i), .. } => {
                    let orig = codes[i].clone().expect("duplicate of a coded sample");
                    initial_text(&format!("{orig}  # same idea"))
                }
                Sample::Wrong { style, .. } => initial_text(&g.wrong(style)),
            };
            codes.push(parse_response(&raw).ok().map(|r| r.code));
            initial_raw.push(raw);
        }
        transcript.push(&render_initial_prompt(p, &shots), initial_raw);

        let c0 = samples.iter().filter(|s| matches!(s, Sample::Correct)).count();
        n_correct += c0;
        for (s, code) in samples.iter().zip(&codes) {
            match *s {
                Sample::Correct => {
                    n_unique += 1;
                    rec.run(p, code.as_ref().unwrap(), Verdict::Correct).await;
                }
                Sample::NoCode => {}
                Sample::Wrong { style, explain, extra, .. } => {
                    rec.run(p, code.as_ref().unwrap(), Verdict::Wrong).await;
                    if !matches!(style, Style::DupOf(_)) {
                        n_unique += 1;
                        n_wrong += 1;
                        if explain == Some(1) || extra == Extra::Correct {
                            n_refined += 1;
                        }
                    }
                }
            }
        }

        for mode in [PromptMode::Refine, PromptMode::ExplainThenRefine] {
            let mut c_by_round = vec![c0; ROUNDS + 1];
            for (s, code) in samples.iter().zip(&codes) {
                let Sample::Wrong { explain, refine, extra, .. } = *s else { continue };
                let fix = if mode == PromptMode::Refine { refine } else { explain };
                if let Some(r) = fix {
                    for c in &mut c_by_round[r..] {
                        *c += 1;
                    }
                }
                let mut latest = code.clone().unwrap();
                let mut report = rec.run(p, &latest, Verdict::Wrong).await;
                for round in 1..=ROUNDS {
                    let fixed = fix == Some(round);
                    let next = if fixed { g.correct() } else { g.wrong(Style::Plain) };
                    let feedback = derive_feedback(&report).expect("wrong code has feedback");
                    let prompt = render_debug_prompt(p, &latest, &feedback, mode).unwrap();
                    let mut completions = vec![refinement_text(mode, &next, fixed)];
                    if round == 1 && mode == PromptMode::ExplainThenRefine {
                        completions.push(match extra {
                            Extra::Correct => refinement_text(mode, &g.correct(), true),
                            Extra::Wrong => refinement_text(mode, &g.wrong(Style::Plain), false),
                            Extra::NoCode => "I am not sure what is wrong here.".into(),
                        });
                        for c in &completions {
                            if let Ok(parsed) = parse_response(c) {
                                let v = if parsed.code == next { fixed } else { extra == Extra::Correct };
                                rec.run(p, &parsed.code, if v { Verdict::Correct } else { Verdict::Wrong }).await;
                            }
                        }
                    }
                    transcript.push(&prompt, completions.clone());
                    let next_code = code_of(&completions[0]);
                    report = rec.run(p, &next_code, if fixed { Verdict::Correct } else { Verdict::Wrong }).await;
                    latest = next_code;
                    if fixed {
                        break;
                    }
                }
            }
            expected_eval
                .entry(selfdebug_core::eval::mode_key(mode))
                .or_default()
                .insert(p.id.clone(), c_by_round);
        }
    }

    std::fs::create_dir_all(&out).unwrap();
    save_corpus(&set, &out.join("toy.jsonl")).unwrap();
    write_atomic(&out.join("fewshot.jsonl"), to_jsonl(&shots).unwrap().as_bytes()).unwrap();
    write_atomic(&out.join("transcript.jsonl"), transcript.to_jsonl().as_bytes()).unwrap();
    let rows: Vec<&ScriptedVerdict> = rec.verdicts.values().collect();
    write_atomic(&out.join("verdicts.jsonl"), to_jsonl(&rows).unwrap().as_bytes()).unwrap();
    let expected = serde_json::json!({
        "collect": {
            "n_unique": n_unique,
            "n_correct": n_correct,
            "n_wrong": n_wrong,
            "n_correct_refinement": n_refined,
        },
        "eval": expected_eval,
    });
    let mut text = serde_json::to_string_pretty(&expected).unwrap();
    text.push('\n');
    write_atomic(&out.join("expected.json"), text.as_bytes()).unwrap();
    let config = serde_json::json!({
        "corpus": {"path": "toy.jsonl"},
        "backend": {"kind": "mock", "transcript": "transcript.jsonl"},
        "model": "toy-model",
        "executor": {"kind": "scripted", "verdicts": "verdicts.jsonl"},
        "shots": "fewshot.jsonl",
        "initial": {"n": 4, "temperature": 1.0},
        "trajectory": {"n": 2, "temperature": 0.8, "mode": "explain-then-refine"},
        "eval": {"n_initial_samples": 4, "rounds": ROUNDS, "mode": "both", "ks": [1, 4]},
        "max_parallel_requests": 4,
        "max_parallel_exec": 4
    });
    let mut text = serde_json::to_string_pretty(&config).unwrap();
    text.push('\n');
    write_atomic(&out.join("config.json"), text.as_bytes()).unwrap();
    println!("wrote {} verdicts to {}", rows.len(), out.display());
}
