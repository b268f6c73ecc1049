//! Data collection: initial samples, wrong-solution trajectories, SFT
//! records and collection statistics.

mod dedup;
mod sft;
mod stats;

use std::collections::HashSet;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::corpus::{Problem, ProblemSet};
use crate::gateway::{
    complete_chat, parse_response, render_debug_prompt, render_initial_prompt, ChatBackend,
    PromptMode, SamplingParams, Shot,
};
use crate::sandbox::{classify, ExecutionReport, ExecutionStatus, Limits, Sandbox, Verdict};
use crate::util::FieldHasher;

pub use dedup::normalize_code;
pub use sft::{build_sft_dataset, render_chat, SftConfig, SftFormat, SftRecord};
pub use stats::{compute_stats, CollectionStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Initial,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub id: String,
    pub problem_id: String,
    /// Position of the completion within its sampling request.
    pub sample_index: usize,
    pub origin: Origin,
    pub parent: Option<String>,
    pub code: String,
    pub explanation: Option<String>,
    /// The response held no code; `code` is empty and the attempt is wrong.
    #[serde(default)]
    pub no_code: bool,
    pub report: ExecutionReport,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub problem_id: String,
    pub mode: PromptMode,
    pub wrong: Attempt,
    pub feedback: String,
    pub refinements: Vec<Attempt>,
}

impl Trajectory {
    pub fn verified(&self) -> impl Iterator<Item = &Attempt> {
        self.refinements
            .iter()
            .filter(|a| a.verdict == Verdict::Correct)
    }

    pub fn has_verified(&self) -> bool {
        self.verified().next().is_some()
    }
}

/// A problem or wrong attempt that could not be processed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub problem_id: String,
    #[serde(default)]
    pub attempt_id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub attempts: Vec<Attempt>,
    pub failures: Vec<StageFailure>,
    /// Completions dropped because no code could be parsed from them.
    pub n_unparsed: usize,
    /// Completions dropped as duplicates of an earlier one.
    pub n_duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub trajectories: Vec<Trajectory>,
    pub failures: Vec<StageFailure>,
}

fn short_id(prefix: &str, h: FieldHasher) -> String {
    format!("{prefix}{}", &h.finish()[..16])
}

pub fn initial_attempt_id(problem_id: &str, code: &str) -> String {
    short_id("a-", FieldHasher::new().field("initial").field(problem_id).field(code))
}

pub fn refinement_attempt_id(parent: &str, mode: PromptMode, index: usize, code: &str) -> String {
    short_id(
        "r-",
        FieldHasher::new()
            .field("refinement")
            .field(parent)
            .field(mode.instruction())
            .field((index as u64).to_le_bytes())
            .field(code),
    )
}

pub fn trajectory_id(wrong_id: &str, mode: PromptMode) -> String {
    short_id(
        "t-",
        FieldHasher::new().field(wrong_id).field(mode.instruction()),
    )
}

/// Feedback shown to the model: the load or runtime error message when the
/// run failed outright, otherwise the first failing test's detail.
pub fn derive_feedback(report: &ExecutionReport) -> Option<String> {
    match report.status {
        ExecutionStatus::SandboxFailure => None,
        ExecutionStatus::CompileError | ExecutionStatus::RuntimeError if report.error.is_some() => {
            report.error.clone()
        }
        _ => report.first_failure().map(|v| {
            format!(
                "Failed: {}",
                v.detail.as_deref().unwrap_or("test did not pass")
            )
        }),
    }
}

/// Keeps the first attempt of each normalized code per problem.
pub fn dedup_attempts(attempts: Vec<Attempt>) -> Vec<Attempt> {
    let mut seen = HashSet::new();
    attempts
        .into_iter()
        .filter(|a| seen.insert((a.problem_id.clone(), normalize_code(&a.code))))
        .collect()
}

pub struct Collector {
    pub backend: Arc<dyn ChatBackend>,
    pub model: String,
    pub sandbox: Arc<Sandbox>,
    pub limits: Limits,
    /// Concurrent gateway requests.
    pub max_parallel_requests: usize,
    /// Concurrent executions.
    pub max_parallel_exec: usize,
    pub shots: Vec<Shot>,
}

struct Candidate {
    problem_index: usize,
    sample_index: usize,
    code: String,
    explanation: Option<String>,
}

impl Collector {
    pub fn new(backend: Arc<dyn ChatBackend>, model: impl Into<String>, sandbox: Arc<Sandbox>) -> Self {
        Self {
            backend,
            model: model.into(),
            sandbox,
            limits: Limits::default(),
            max_parallel_requests: 8,
            max_parallel_exec: 8,
            shots: Vec::new(),
        }
    }

    async fn execute(&self, problems: &[&Problem], cands: &[Candidate]) -> Vec<ExecutionReport> {
        let jobs: Vec<(&str, &Problem)> = cands
            .iter()
            .map(|c| (c.code.as_str(), problems[c.problem_index]))
            .collect();
        self.sandbox
            .batch_execute(&jobs, &self.limits, self.max_parallel_exec)
            .await
    }

    /// Samples `params.n` solutions per problem, parses, dedups, executes
    /// and classifies them. A gateway error skips that problem only.
    pub async fn sample_initial(
        &self,
        problems: &ProblemSet,
        params: &SamplingParams,
    ) -> SampleOutcome {
        let responses: Vec<_> = stream::iter(problems.problems.iter())
            .map(|p| async move {
                let messages = render_initial_prompt(p, &self.shots);
                complete_chat(self.backend.as_ref(), &self.model, &messages, params).await
            })
            .buffered(self.max_parallel_requests.max(1))
            .collect()
            .await;

        let mut outcome = SampleOutcome::default();
        let mut cands = Vec::new();
        for (pi, (p, resp)) in problems.problems.iter().zip(responses).enumerate() {
            let completions = match resp {
                Ok(c) => c,
                Err(e) => {
                    outcome.failures.push(StageFailure {
                        problem_id: p.id.clone(),
                        attempt_id: None,
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let mut seen = HashSet::new();
            for (si, raw) in completions.iter().enumerate() {
                let Ok(parsed) = parse_response(raw) else {
                    outcome.n_unparsed += 1;
                    continue;
                };
                if !seen.insert(normalize_code(&parsed.code)) {
                    outcome.n_duplicates += 1;
                    continue;
                }
                cands.push(Candidate {
                    problem_index: pi,
                    sample_index: si,
                    code: parsed.code,
                    explanation: None,
                });
            }
        }

        let refs: Vec<&Problem> = problems.problems.iter().collect();
        let reports = self.execute(&refs, &cands).await;
        for (c, report) in cands.into_iter().zip(reports) {
            let p = refs[c.problem_index];
            outcome.attempts.push(Attempt {
                id: initial_attempt_id(&p.id, &c.code),
                problem_id: p.id.clone(),
                sample_index: c.sample_index,
                origin: Origin::Initial,
                parent: None,
                verdict: classify(&report),
                report,
                code: c.code,
                explanation: None,
                no_code: false,
            });
        }
        outcome
    }

    /// Requests `params.n` explanation/refinement samples per wrong attempt
    /// and executes every refinement. Failed refinements stay in the
    /// trajectory; responses without code become `no_code` attempts.
    pub async fn collect_trajectories(
        &self,
        problems: &ProblemSet,
        wrong: &[Attempt],
        params: &SamplingParams,
        mode: PromptMode,
    ) -> TrajectoryOutcome {
        let mut outcome = TrajectoryOutcome::default();
        let mut work: Vec<(&Attempt, &Problem, String)> = Vec::new();
        for w in wrong {
            let fail = |error: String| StageFailure {
                problem_id: w.problem_id.clone(),
                attempt_id: Some(w.id.clone()),
                error,
            };
            let Some(p) = problems.get(&w.problem_id) else {
                outcome.failures.push(fail("problem not in corpus".into()));
                continue;
            };
            if w.verdict != Verdict::Wrong || w.no_code {
                outcome.failures.push(fail("attempt is not a wrong solution".into()));
                continue;
            }
            match derive_feedback(&w.report) {
                Some(f) => work.push((w, p, f)),
                None => outcome.failures.push(fail("no execution feedback".into())),
            }
        }

        let responses: Vec<_> = stream::iter(work.iter())
            .map(|(w, p, feedback)| async move {
                let messages = render_debug_prompt(p, &w.code, feedback, mode)?;
                complete_chat(self.backend.as_ref(), &self.model, &messages, params).await
            })
            .buffered(self.max_parallel_requests.max(1))
            .collect()
            .await;

        let problem_refs: Vec<&Problem> = work.iter().map(|(_, p, _)| *p).collect();
        let mut cands = Vec::new();
        let mut no_code: Vec<(usize, usize)> = Vec::new();
        let mut ok_work = vec![false; work.len()];
        for (wi, ((w, _, _), resp)) in work.iter().zip(responses).enumerate() {
            match resp {
                Ok(completions) => {
                    ok_work[wi] = true;
                    for (si, raw) in completions.iter().enumerate() {
                        match parse_response(raw) {
                            Ok(parsed) => cands.push(Candidate {
                                problem_index: wi,
                                sample_index: si,
                                code: parsed.code,
                                explanation: parsed.explanation,
                            }),
                            Err(_) => no_code.push((wi, si)),
                        }
                    }
                }
                Err(e) => outcome.failures.push(StageFailure {
                    problem_id: w.problem_id.clone(),
                    attempt_id: Some(w.id.clone()),
                    error: e.to_string(),
                }),
            }
        }

        let reports = self.execute(&problem_refs, &cands).await;
        let mut per_work: Vec<Vec<Attempt>> = vec![Vec::new(); work.len()];
        for (c, report) in cands.into_iter().zip(reports) {
            let (w, p, _) = &work[c.problem_index];
            per_work[c.problem_index].push(Attempt {
                id: refinement_attempt_id(&w.id, mode, c.sample_index, &c.code),
                problem_id: p.id.clone(),
                sample_index: c.sample_index,
                origin: Origin::Refinement,
                parent: Some(w.id.clone()),
                verdict: classify(&report),
                report,
                code: c.code,
                explanation: c.explanation,
                no_code: false,
            });
        }
        for (wi, si) in no_code {
            let (w, p, _) = &work[wi];
            let report = ExecutionReport::all_failed(
                "",
                p.tests.len(),
                ExecutionStatus::CompileError,
                "no code found in response",
            );
            per_work[wi].push(Attempt {
                id: refinement_attempt_id(&w.id, mode, si, ""),
                problem_id: p.id.clone(),
                sample_index: si,
                origin: Origin::Refinement,
                parent: Some(w.id.clone()),
                verdict: Verdict::Wrong,
                report,
                code: String::new(),
                explanation: None,
                no_code: true,
            });
        }

        for (wi, ((w, p, feedback), mut refinements)) in work.into_iter().zip(per_work).enumerate() {
            if !ok_work[wi] {
                continue;
            }
            refinements.sort_by_key(|a| a.sample_index);
            outcome.trajectories.push(Trajectory {
                id: trajectory_id(&w.id, mode),
                problem_id: p.id.clone(),
                mode,
                wrong: w.clone(),
                feedback,
                refinements,
            });
        }
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::TestVerdict;

    fn report(status: ExecutionStatus, passed: &[bool], error: Option<&str>) -> ExecutionReport {
        ExecutionReport {
            candidate_hash: String::new(),
            per_test: passed
                .iter()
                .enumerate()
                .map(|(index, &p)| TestVerdict {
                    index,
                    passed: p,
                    detail: (!p).then(|| format!("AssertionError: test {index}")),
                })
                .collect(),
            wall_ms: 0,
            status,
            error: error.map(str::to_string),
            cache_hit: false,
        }
    }

    #[test]
    fn feedback_rule() {
        let r = report(ExecutionStatus::Completed, &[true, false, false], None);
        assert_eq!(derive_feedback(&r).unwrap(), "Failed: AssertionError: test 1");
        let r = report(
            ExecutionStatus::RuntimeError,
            &[false],
            Some("NameError: name 'y' is not defined"),
        );
        assert_eq!(derive_feedback(&r).unwrap(), "NameError: name 'y' is not defined");
        let r = report(ExecutionStatus::SandboxFailure, &[false], Some("boom"));
        assert_eq!(derive_feedback(&r), None);
    }

    #[test]
    fn ids_depend_on_content() {
        assert_ne!(initial_attempt_id("p", "a"), initial_attempt_id("p", "b"));
        assert_ne!(initial_attempt_id("p", "a"), initial_attempt_id("q", "a"));
        assert_ne!(
            refinement_attempt_id("w", PromptMode::Refine, 0, "a"),
            refinement_attempt_id("w", PromptMode::Refine, 1, "a")
        );
        assert_ne!(
            trajectory_id("w", PromptMode::Refine),
            trajectory_id("w", PromptMode::ExplainThenRefine)
        );
    }
}
