//! Client side of the runner-shim protocol.
//!
//! The shim reads one [`ShimRequest`] JSON document on stdin and writes one
//! [`ShimResponse`] on stdout, then exits 0 whether or not tests passed.
//! Each job gets its own process, started in a fresh scratch directory under
//! an address-space limit and in its own process group so that a timeout
//! kills anything the candidate spawned.

use std::process::Stdio;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;

use super::{ExecutionReport, ExecutionStatus, Executor, Limits, SandboxError, TestVerdict};
use crate::corpus::{Problem, TestCase};
use crate::util::sha256_hex;

pub const SHIM_VERSION: u32 = 1;

/// Extra time on top of the summed test budgets before the process is killed.
const STARTUP_GRACE: Duration = Duration::from_millis(1000);
const MAX_RESPONSE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimRequest {
    pub code: String,
    pub tests: Vec<TestCase>,
    pub entry_point: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimResult {
    pub index: usize,
    pub passed: bool,
    #[serde(default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShimPhase {
    Load,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimFatal {
    pub phase: ShimPhase,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimResponse {
    pub shim_version: u32,
    pub results: Vec<ShimResult>,
    #[serde(default)]
    pub fatal: Option<ShimFatal>,
}

#[derive(Debug, Clone)]
pub struct ShimExecutor {
    program: String,
    args: Vec<String>,
}

impl ShimExecutor {
    /// `command` is the program followed by its arguments, e.g.
    /// `["python3", "/opt/shim/runner.py"]`.
    pub fn new(command: Vec<String>) -> Result<Self, SandboxError> {
        let mut it = command.into_iter();
        let program = it
            .next()
            .ok_or_else(|| SandboxError::Backend("empty shim command".into()))?;
        Ok(Self {
            program,
            args: it.collect(),
        })
    }

    fn request_for(code: &str, problem: &Problem, limits: &Limits) -> ShimRequest {
        ShimRequest {
            code: code.to_string(),
            tests: problem
                .tests
                .iter()
                .map(|t| TestCase {
                    check: t.check.clone(),
                    timeout_ms: t.timeout_ms.min(limits.per_test_timeout_ms),
                })
                .collect(),
            entry_point: problem.entry_point.clone(),
        }
    }
}

#[async_trait]
impl Executor for ShimExecutor {
    async fn execute(
        &self,
        code: &str,
        problem: &Problem,
        limits: &Limits,
    ) -> Result<ExecutionReport, SandboxError> {
        let request = Self::request_for(code, problem, limits);
        let budget: u64 = request.tests.iter().map(|t| t.timeout_ms).sum();
        let deadline = Duration::from_millis(budget) + STARTUP_GRACE;
        let scratch = tempfile::tempdir().map_err(SandboxError::Spawn)?;
        let memory_bytes = limits.memory_mb.saturating_mul(1 << 20) as libc::rlim_t;

        let mut cmd = tokio::process::Command::new(&self.program);
        cmd.args(&self.args)
            .current_dir(scratch.path())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                libc::setsid();
                let lim = libc::rlimit {
                    rlim_cur: memory_bytes,
                    rlim_max: memory_bytes,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(SandboxError::Spawn)?;
        let pgid = child.id().map(|p| p as libc::pid_t);
        let body = serde_json::to_vec(&request).expect("requests serialize");
        if let Some(mut stdin) = child.stdin.take() {
            // A shim that exits before reading everything is judged by its
            // response, not by the broken pipe.
            let _ = stdin.write_all(&body).await;
            let _ = stdin.shutdown().await;
        }
        let outcome = tokio::time::timeout(deadline, child.wait_with_output()).await;
        if let Some(pgid) = pgid {
            // SAFETY: plain kill(2) on the process group we created.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
        }
        let wall_ms = started.elapsed().as_millis() as u64;

        let output = match outcome {
            Err(_) => {
                let mut r = ExecutionReport::all_failed(
                    code,
                    problem.tests.len(),
                    ExecutionStatus::Timeout,
                    "timeout",
                );
                r.wall_ms = wall_ms;
                return Ok(r);
            }
            Ok(res) => res.map_err(SandboxError::Spawn)?,
        };
        if output.stdout.len() > MAX_RESPONSE_BYTES {
            return Err(SandboxError::Protocol("response exceeds size cap".into()));
        }
        let response: ShimResponse = serde_json::from_slice(&output.stdout).map_err(|e| {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: String = stderr
                .chars()
                .rev()
                .take(500)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect();
            SandboxError::Protocol(format!(
                "unparseable response ({e}); exit {:?}; stderr: {tail}",
                output.status.code()
            ))
        })?;

        let scratch_path = scratch.path().to_string_lossy().into_owned();
        let clean = |s: &str| sanitize_detail(s, &scratch_path, limits.max_output_bytes);
        let mut report = report_from_response(code, problem.tests.len(), response, clean)?;
        report.wall_ms = wall_ms;
        Ok(report)
    }

    fn describe(&self) -> String {
        let mut parts = vec![self.program.clone()];
        parts.extend(self.args.iter().cloned());
        format!("shim:{}", parts.join(" "))
    }
}

/// Maps a shim response onto a report, checking the protocol invariants.
pub(crate) fn report_from_response(
    code: &str,
    n_tests: usize,
    response: ShimResponse,
    clean: impl Fn(&str) -> String,
) -> Result<ExecutionReport, SandboxError> {
    if response.shim_version != SHIM_VERSION {
        return Err(SandboxError::Protocol(format!(
            "shim_version {} (expected {SHIM_VERSION})",
            response.shim_version
        )));
    }
    for (pos, r) in response.results.iter().enumerate() {
        if r.index != pos || r.index >= n_tests {
            return Err(SandboxError::Protocol(format!(
                "result {pos} has index {} for {n_tests} tests",
                r.index
            )));
        }
    }
    if response.fatal.is_none() && response.results.len() != n_tests {
        return Err(SandboxError::Protocol(format!(
            "{} results for {n_tests} tests",
            response.results.len()
        )));
    }

    let mut per_test: Vec<TestVerdict> = response
        .results
        .iter()
        .map(|r| TestVerdict {
            index: r.index,
            passed: r.passed,
            detail: match (&r.detail, r.passed) {
                (Some(d), _) => Some(clean(d)),
                (None, false) => Some("failed".into()),
                (None, true) => None,
            },
        })
        .collect();

    let (status, error) = match &response.fatal {
        Some(f) => {
            let message = clean(&f.message);
            let status = match f.phase {
                ShimPhase::Load if is_compile_error(&message) => ExecutionStatus::CompileError,
                _ => ExecutionStatus::RuntimeError,
            };
            for v in &mut per_test {
                if matches!(f.phase, ShimPhase::Load) {
                    v.passed = false;
                    v.detail.get_or_insert_with(|| message.clone());
                }
            }
            for index in per_test.len()..n_tests {
                per_test.push(TestVerdict {
                    index,
                    passed: false,
                    detail: Some(message.clone()),
                });
            }
            (status, Some(message))
        }
        None => match per_test.iter().position(|v| is_timeout(v.detail.as_deref())) {
            Some(first) => {
                for v in &mut per_test[first..] {
                    v.passed = false;
                    v.detail = Some("timeout".into());
                }
                (ExecutionStatus::Timeout, None)
            }
            None => (ExecutionStatus::Completed, None),
        },
    };

    Ok(ExecutionReport {
        candidate_hash: sha256_hex(code),
        per_test,
        wall_ms: 0,
        status,
        error,
        cache_hit: false,
    })
}

fn is_compile_error(message: &str) -> bool {
    ["SyntaxError", "IndentationError", "TabError"]
        .iter()
        .any(|k| message.starts_with(k))
}

fn is_timeout(detail: Option<&str>) -> bool {
    matches!(detail, Some(d) if d == "timeout" || d.starts_with("timeout:"))
}

/// Makes feedback text machine-independent: the scratch directory becomes
/// `.`, other absolute paths are cut to their last component, and the text
/// is truncated to `max_bytes` on a character boundary.
pub(crate) fn sanitize_detail(detail: &str, scratch: &str, max_bytes: usize) -> String {
    static ABS_PATH: OnceLock<Regex> = OnceLock::new();
    let re = ABS_PATH.get_or_init(|| {
        Regex::new(r#"(^|[\s"'(=,])(?:/[^/\s"':,()]+)+/([^/\s"':,()]+)"#).unwrap()
    });
    let mut s = if scratch.is_empty() {
        detail.to_string()
    } else {
        detail.replace(scratch, ".")
    };
    s = re.replace_all(&s, "$1$2").into_owned();
    if s.len() > max_bytes {
        let mut end = max_bytes;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        s.truncate(end);
    }
    s
}
