//! Running candidates against a problem's tests.
//!
//! An [`Executor`] turns `(code, problem, limits)` into an [`ExecutionReport`].
//! [`ShimExecutor`] drives the Python runner shim in a fresh process per job;
//! [`ScriptedExecutor`] replays a verdict table for hermetic tests. The
//! [`Sandbox`] wraps either one with the content-addressed result cache and
//! bounded batch execution.

mod cache;
mod scripted;
mod shim;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Problem;
use crate::util::{sha256_hex, FieldHasher};

pub use cache::ResultCache;
pub use scripted::{ScriptedExecutor, ScriptedVerdict};
pub use shim::{ShimExecutor, ShimFatal, ShimRequest, ShimResponse, ShimResult, SHIM_VERSION};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("candidate code is empty")]
    EmptyCandidate,
    #[error("failed to start runner: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("runner protocol violation: {0}")]
    Protocol(String),
    #[error("no scripted verdict for problem {problem_id} and code {code_sha256}")]
    Unscripted {
        problem_id: String,
        code_sha256: String,
    },
    #[error("execution backend error: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub per_test_timeout_ms: u64,
    pub memory_mb: u64,
    pub max_output_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            per_test_timeout_ms: 10_000,
            memory_mb: 512,
            max_output_bytes: 64 * 1024,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), String> {
        if self.per_test_timeout_ms == 0 || self.memory_mb == 0 || self.max_output_bytes == 0 {
            return Err("limits must all be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionStatus {
    Completed,
    CompileError,
    RuntimeError,
    Timeout,
    SandboxFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub index: usize,
    pub passed: bool,
    #[serde(default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub candidate_hash: String,
    pub per_test: Vec<TestVerdict>,
    pub wall_ms: u64,
    pub status: ExecutionStatus,
    /// Load or runtime error message, when the run did not complete.
    #[serde(default)]
    pub error: Option<String>,
    /// Set when the report came from the cache. Never serialized, so cached
    /// and fresh reports have identical bytes.
    #[serde(skip)]
    pub cache_hit: bool,
}

impl ExecutionReport {
    /// Every test failed with the same detail.
    pub fn all_failed(code: &str, n_tests: usize, status: ExecutionStatus, detail: &str) -> Self {
        Self {
            candidate_hash: sha256_hex(code),
            per_test: (0..n_tests)
                .map(|index| TestVerdict {
                    index,
                    passed: false,
                    detail: Some(detail.to_string()),
                })
                .collect(),
            wall_ms: 0,
            status,
            error: match status {
                ExecutionStatus::Completed | ExecutionStatus::Timeout => None,
                _ => Some(detail.to_string()),
            },
            cache_hit: false,
        }
    }

    pub fn sandbox_failure(code: &str, problem: &Problem, err: &SandboxError) -> Self {
        Self::all_failed(
            code,
            problem.tests.len(),
            ExecutionStatus::SandboxFailure,
            &err.to_string(),
        )
    }

    pub fn n_passed(&self) -> usize {
        self.per_test.iter().filter(|v| v.passed).count()
    }

    pub fn first_failure(&self) -> Option<&TestVerdict> {
        self.per_test.iter().find(|v| !v.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Wrong,
}

/// Correct iff the run completed and every test passed.
pub fn classify(report: &ExecutionReport) -> Verdict {
    if report.status == ExecutionStatus::Completed
        && !report.per_test.is_empty()
        && report.per_test.iter().all(|v| v.passed)
    {
        Verdict::Correct
    } else {
        Verdict::Wrong
    }
}

#[async_trait]
pub trait Executor: Send + Sync {
    async fn execute(
        &self,
        code: &str,
        problem: &Problem,
        limits: &Limits,
    ) -> Result<ExecutionReport, SandboxError>;

    /// Identifies the backend in run manifests.
    fn describe(&self) -> String;
}

/// Tracks how many executor calls are in flight.
#[derive(Debug, Default)]
pub struct ConcurrencyProbe {
    current: AtomicUsize,
    peak: AtomicUsize,
    total: AtomicUsize,
}

impl ConcurrencyProbe {
    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Number of executor calls made, i.e. cache misses.
    pub fn total(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    fn enter(&self) -> ProbeGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.total.fetch_add(1, Ordering::SeqCst);
        ProbeGuard(self)
    }
}

struct ProbeGuard<'a>(&'a ConcurrencyProbe);

impl Drop for ProbeGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Cache key for a job. Besides code, problem id and limits it covers the
/// problem's tests, so editing a test invalidates old verdicts.
pub fn cache_key(code: &str, problem: &Problem, limits: &Limits) -> String {
    let tests = serde_json::to_string(&problem.tests).expect("tests serialize");
    FieldHasher::new()
        .field(code)
        .field(&problem.id)
        .field(limits.per_test_timeout_ms.to_le_bytes())
        .field(limits.memory_mb.to_le_bytes())
        .field((limits.max_output_bytes as u64).to_le_bytes())
        .field(tests)
        .finish()
}

pub struct Sandbox {
    executor: Arc<dyn Executor>,
    cache: ResultCache,
    probe: Arc<ConcurrencyProbe>,
}

impl Sandbox {
    pub fn new(executor: Arc<dyn Executor>) -> Self {
        Self {
            executor,
            cache: ResultCache::in_memory(),
            probe: Arc::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResultCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn probe(&self) -> Arc<ConcurrencyProbe> {
        self.probe.clone()
    }

    pub fn describe(&self) -> String {
        self.executor.describe()
    }

    pub async fn run_candidate(
        &self,
        code: &str,
        problem: &Problem,
        limits: &Limits,
    ) -> Result<ExecutionReport, SandboxError> {
        if code.trim().is_empty() {
            return Err(SandboxError::EmptyCandidate);
        }
        let key = cache_key(code, problem, limits);
        if let Some(mut hit) = self.cache.get(&key) {
            hit.cache_hit = true;
            return Ok(hit);
        }
        let report = {
            let _guard = self.probe.enter();
            self.executor.execute(code, problem, limits).await?
        };
        if report.status != ExecutionStatus::SandboxFailure {
            self.cache.put(&key, &report);
        }
        Ok(report)
    }

    /// Runs all jobs with at most `max_parallel` in flight. Results come back
    /// in job order. A job that fails in the sandbox yields a
    /// `sandbox-failure` report and does not affect the others. Repeated
    /// jobs within the batch run once; later copies are cache hits.
    pub async fn batch_execute(
        &self,
        jobs: &[(&str, &Problem)],
        limits: &Limits,
        max_parallel: usize,
    ) -> Vec<ExecutionReport> {
        let max_parallel = max_parallel.max(1);
        let keys: Vec<String> = jobs
            .iter()
            .map(|(code, p)| cache_key(code, p, limits))
            .collect();
        let mut first_of = std::collections::HashMap::new();
        let unique: Vec<usize> = (0..jobs.len())
            .filter(|&i| *first_of.entry(keys[i].clone()).or_insert(i) == i)
            .collect();

        let results: Vec<ExecutionReport> = stream::iter(unique.iter().copied())
            .map(|i| {
                let (code, problem) = jobs[i];
                async move {
                    match self.run_candidate(code, problem, limits).await {
                        Ok(r) => r,
                        Err(e) => {
                            tracing::warn!(problem = %problem.id, error = %e, "sandbox failure");
                            ExecutionReport::sandbox_failure(code, problem, &e)
                        }
                    }
                }
            })
            .buffered(max_parallel)
            .collect()
            .await;

        let mut by_index: Vec<Option<ExecutionReport>> = vec![None; jobs.len()];
        for (i, r) in unique.into_iter().zip(results) {
            by_index[i] = Some(r);
        }
        (0..jobs.len())
            .map(|i| {
                let first = first_of[&keys[i]];
                if first == i {
                    by_index[i].clone().expect("unique job has a result")
                } else {
                    let mut r = by_index[first].clone().expect("unique job has a result");
                    r.cache_hit = r.status != ExecutionStatus::SandboxFailure;
                    r
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(status: ExecutionStatus, passed: &[bool]) -> ExecutionReport {
        ExecutionReport {
            candidate_hash: String::new(),
            per_test: passed
                .iter()
                .enumerate()
                .map(|(index, &passed)| TestVerdict {
                    index,
                    passed,
                    detail: None,
                })
                .collect(),
            wall_ms: 0,
            status,
            error: None,
            cache_hit: false,
        }
    }

    #[test]
    fn classification() {
        use ExecutionStatus::*;
        assert_eq!(classify(&report(Completed, &[true, true])), Verdict::Correct);
        assert_eq!(classify(&report(Completed, &[true, false])), Verdict::Wrong);
        assert_eq!(classify(&report(RuntimeError, &[true, true])), Verdict::Wrong);
        assert_eq!(classify(&report(Timeout, &[])), Verdict::Wrong);
    }

    #[test]
    fn status_wire_names() {
        assert_eq!(
            serde_json::to_string(&ExecutionStatus::CompileError).unwrap(),
            "\"compile-error\""
        );
        assert_eq!(
            serde_json::to_string(&ExecutionStatus::SandboxFailure).unwrap(),
            "\"sandbox-failure\""
        );
    }

    #[test]
    fn cache_flag_is_not_serialized() {
        let mut r = report(ExecutionStatus::Completed, &[true]);
        let fresh = serde_json::to_string(&r).unwrap();
        r.cache_hit = true;
        assert_eq!(serde_json::to_string(&r).unwrap(), fresh);
    }
}
