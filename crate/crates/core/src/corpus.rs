//! Problem corpora: the canonical JSONL schema plus MBPP and APPS adapters.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::{classify, ExecutionStatus, Limits, Sandbox, SandboxError, Verdict};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TEST_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", schema_message(.path, *.line, .id.as_deref(), .message))]
    Schema {
        path: PathBuf,
        line: Option<usize>,
        id: Option<String>,
        message: String,
    },
    #[error("{path}: duplicate problem id {id:?} (line {line})")]
    DuplicateId {
        path: PathBuf,
        id: String,
        line: usize,
    },
}

fn schema_message(path: &Path, line: Option<usize>, id: Option<&str>, message: &str) -> String {
    let mut s = path.display().to_string();
    if let Some(line) = line {
        s.push_str(&format!(":{line}"));
    }
    if let Some(id) = id {
        s.push_str(&format!(" (problem {id:?})"));
    }
    s.push_str(": ");
    s.push_str(message);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    MbppLike,
    AppsLike,
    ContestLike,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestCheck {
    /// A Python statement executed in the candidate's namespace.
    Assertion { payload: String },
    /// The candidate runs as a program; trimmed stdout must match.
    IoPair {
        stdin: String,
        expected_stdout: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    #[serde(flatten)]
    pub check: TestCheck,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TEST_TIMEOUT_MS
}

impl TestCase {
    pub fn assertion(payload: impl Into<String>) -> Self {
        Self {
            check: TestCheck::Assertion {
                payload: payload.into(),
            },
            timeout_ms: DEFAULT_TEST_TIMEOUT_MS,
        }
    }

    pub fn io_pair(stdin: impl Into<String>, expected_stdout: impl Into<String>) -> Self {
        Self {
            check: TestCheck::IoPair {
                stdin: stdin.into(),
                expected_stdout: expected_stdout.into(),
            },
            timeout_ms: DEFAULT_TEST_TIMEOUT_MS,
        }
    }

    /// Short human-readable form used in prompts.
    pub fn describe(&self) -> String {
        match &self.check {
            TestCheck::Assertion { payload } => payload.clone(),
            TestCheck::IoPair {
                stdin,
                expected_stdout,
            } => format!("Input:\n{stdin}\nExpected output:\n{expected_stdout}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
    pub tests: Vec<TestCase>,
    #[serde(default)]
    pub reference_solutions: Vec<String>,
    #[serde(default)]
    pub entry_point: Option<String>,
    pub source: Source,
}

impl Problem {
    /// Checks the type invariants. Returns a message for the first violation.
    pub fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.tests.is_empty() {
            return Err("tests list is empty".into());
        }
        for (i, t) in self.tests.iter().enumerate() {
            if t.timeout_ms == 0 {
                return Err(format!("test {i}: timeout_ms must be positive"));
            }
            if let TestCheck::Assertion { payload } = &t.check {
                if payload.trim().is_empty() {
                    return Err(format!("test {i}: assertion payload is empty"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSet {
    pub name: String,
    pub schema_version: u32,
    pub problems: Vec<Problem>,
}

impl ProblemSet {
    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    CanonicalJsonl,
    MbppJsonl,
    AppsDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical-jsonl" | "canonical" => Ok(Self::CanonicalJsonl),
            "mbpp-jsonl" | "mbpp" => Ok(Self::MbppJsonl),
            "apps-dir" | "apps" => Ok(Self::AppsDir),
            other => Err(format!(
                "unknown corpus format {other:?} (expected canonical-jsonl, mbpp-jsonl or apps-dir)"
            )),
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<ProblemSet, CorpusError> {
    let problems = match format {
        CorpusFormat::CanonicalJsonl => read_lines(path, |_, line| {
            serde_json::from_str::<Problem>(line).map_err(|e| e.to_string())
        })?,
        CorpusFormat::MbppJsonl => read_lines(path, |_, line| {
            let rec: MbppRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Ok(rec.into_problem())
        })?,
        CorpusFormat::AppsDir => load_apps_dir(path)?,
    };

    let mut seen = HashSet::new();
    for (line, p) in &problems {
        if let Err(message) = p.check() {
            return Err(CorpusError::Schema {
                path: path.to_path_buf(),
                line: Some(*line),
                id: Some(p.id.clone()),
                message,
            });
        }
        if !seen.insert(p.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id: p.id.clone(),
                line: *line,
            });
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    Ok(ProblemSet {
        name,
        schema_version: SCHEMA_VERSION,
        problems: problems.into_iter().map(|(_, p)| p).collect(),
    })
}

/// Serializes the set as canonical JSONL. Loading the output gives back an
/// equal set, and saving that again gives the same bytes.
pub fn corpus_to_jsonl(set: &ProblemSet) -> String {
    crate::util::to_jsonl(&set.problems).expect("problems always serialize")
}

pub fn save_corpus(set: &ProblemSet, path: &Path) -> Result<(), CorpusError> {
    crate::util::write_atomic(path, corpus_to_jsonl(set).as_bytes()).map_err(|source| {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

fn read_lines(
    path: &Path,
    mut parse: impl FnMut(usize, &str) -> Result<Problem, String>,
) -> Result<Vec<(usize, Problem)>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p = parse(i + 1, line).map_err(|message| CorpusError::Schema {
            path: path.to_path_buf(),
            line: Some(i + 1),
            id: None,
            message,
        })?;
        out.push((i + 1, p));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct MbppRecord {
    task_id: serde_json::Value,
    text: String,
    code: String,
    test_list: Vec<String>,
    #[serde(default)]
    test_setup_code: String,
    #[serde(default)]
    challenge_test_list: Vec<String>,
}

impl MbppRecord {
    fn into_problem(self) -> Problem {
        let task = match &self.task_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let setup = self.test_setup_code.trim();
        let tests = self
            .test_list
            .iter()
            .chain(&self.challenge_test_list)
            .map(|t| {
                if setup.is_empty() {
                    TestCase::assertion(t.trim())
                } else {
                    TestCase::assertion(format!("{setup}\n{}", t.trim()))
                }
            })
            .collect();
        let entry_point = self.test_list.first().and_then(|t| entry_point_of(t));
        let code = self.code.replace("\r\n", "\n");
        Problem {
            id: format!("mbpp/{task}"),
            description: self.text.trim().to_string(),
            tests,
            reference_solutions: vec![code],
            entry_point,
            source: Source::MbppLike,
        }
    }
}

/// Name of the function called by an `assert name(...)` statement.
fn entry_point_of(assertion: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^\s*assert\s*\(?\s*(?:not\s+)?(?:set\(|sorted\(|math\.isclose\()?\s*([A-Za-z_]\w*)\s*\(")
            .unwrap()
    });
    re.captures(assertion).map(|c| c[1].to_string())
}

#[derive(Deserialize)]
struct AppsIo {
    inputs: Vec<serde_json::Value>,
    outputs: Vec<serde_json::Value>,
    #[serde(default)]
    fn_name: Option<String>,
}

/// Reads an APPS-style tree: one subdirectory per problem holding
/// `question.txt`, `input_output.json` and optionally `solutions.json`.
/// Subdirectories without `input_output.json` are skipped.
fn load_apps_dir(root: &Path) -> Result<Vec<(usize, Problem)>, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut out = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let io_path = dir.join("input_output.json");
        if !io_path.exists() {
            tracing::warn!(dir = %dir.display(), "skipping APPS entry without input_output.json");
            continue;
        }
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let schema = |message: String| CorpusError::Schema {
            path: dir.clone(),
            line: None,
            id: Some(format!("apps/{name}")),
            message,
        };
        let question = std::fs::read_to_string(dir.join("question.txt"))
            .map_err(io_err(&dir.join("question.txt")))?;
        let io_text = std::fs::read_to_string(&io_path).map_err(io_err(&io_path))?;
        let io: AppsIo = serde_json::from_str(&io_text)
            .map_err(|e| schema(format!("input_output.json: {e}")))?;
        if io.inputs.len() != io.outputs.len() {
            return Err(schema(format!(
                "input_output.json has {} inputs but {} outputs",
                io.inputs.len(),
                io.outputs.len()
            )));
        }
        let tests = match &io.fn_name {
            Some(f) => io
                .inputs
                .iter()
                .zip(&io.outputs)
                .map(|(args, want)| {
                    let args = match args {
                        serde_json::Value::Array(items) => items.clone(),
                        other => vec![other.clone()],
                    };
                    let rendered: Vec<String> = args.iter().map(python_literal).collect();
                    TestCase::assertion(format!(
                        "assert {f}({}) == {}",
                        rendered.join(", "),
                        python_literal(want)
                    ))
                })
                .collect(),
            None => io
                .inputs
                .iter()
                .zip(&io.outputs)
                .map(|(input, want)| TestCase::io_pair(text_of(input), text_of(want)))
                .collect(),
        };
        let sol_path = dir.join("solutions.json");
        let reference_solutions = if sol_path.exists() {
            let text = std::fs::read_to_string(&sol_path).map_err(io_err(&sol_path))?;
            serde_json::from_str::<Vec<String>>(&text)
                .map_err(|e| schema(format!("solutions.json: {e}")))?
        } else {
            Vec::new()
        };
        out.push((
            i + 1,
            Problem {
                id: format!("apps/{name}"),
                description: question.trim().to_string(),
                tests,
                reference_solutions,
                entry_point: io.fn_name.clone(),
                source: Source::AppsLike,
            },
        ));
    }
    Ok(out)
}

/// stdin/stdout fields are strings, or occasionally lists of lines.
fn text_of(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(items) => items.iter().map(text_of).collect::<Vec<_>>().join("\n"),
        other => other.to_string(),
    }
}

/// Renders a JSON value as an equivalent Python literal.
fn python_literal(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => n.to_string(),
        // JSON string escapes are all valid in Python string literals.
        Value::String(_) => v.to_string(),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(python_literal).collect();
            format!("[{}]", parts.join(", "))
        }
        Value::Object(map) => {
            let parts: Vec<String> = map
                .iter()
                .map(|(k, v)| format!("{}: {}", Value::String(k.clone()), python_literal(v)))
                .collect();
            format!("{{{}}}", parts.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionCheck {
    pub solution_index: usize,
    pub status: ExecutionStatus,
    pub failing_tests: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem_id: String,
    pub ok: bool,
    pub solutions: Vec<SolutionCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Runs every reference solution of `p` and reports which tests fail.
pub async fn validate_problem(
    p: &Problem,
    sandbox: &Sandbox,
    limits: &Limits,
) -> Result<ValidationReport, SandboxError> {
    if p.reference_solutions.is_empty() {
        return Ok(ValidationReport {
            problem_id: p.id.clone(),
            ok: true,
            solutions: Vec::new(),
            note: Some("unverifiable".into()),
        });
    }
    let mut solutions = Vec::new();
    let mut ok = true;
    for (i, code) in p.reference_solutions.iter().enumerate() {
        let report = sandbox.run_candidate(code, p, limits).await?;
        if report.status == ExecutionStatus::SandboxFailure {
            return Err(SandboxError::Backend(
                report.error.unwrap_or_else(|| "sandbox failure".into()),
            ));
        }
        if classify(&report) == Verdict::Wrong {
            ok = false;
        }
        solutions.push(SolutionCheck {
            solution_index: i,
            status: report.status,
            failing_tests: report
                .per_test
                .iter()
                .filter(|v| !v.passed)
                .map(|v| v.index)
                .collect(),
        });
    }
    Ok(ValidationReport {
        problem_id: p.id.clone(),
        ok,
        solutions,
        note: None,
    })
}
