//! pass@k, refinement success rate and the iterative refinement loop.

mod report;

use std::collections::BTreeMap;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::derive_feedback;
use crate::corpus::{Problem, ProblemSet};
use crate::gateway::{
    complete_chat, parse_response, render_debug_prompt, render_initial_prompt, ChatBackend,
    GatewayError, PromptMode, SamplingParams, Shot,
};
use crate::sandbox::{classify, ExecutionReport, Limits, Sandbox, Verdict};

pub use report::{
    render_report, BenchmarkReport, EvalReport, ReportFormat, RoundReport, SeriesReport,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Unbiased pass@k: `1 - C(n - c, k) / C(n, k)`, as a running product.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::Domain(format!(
            "pass@k needs 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut all_wrong = 1.0;
    for j in 0..k {
        all_wrong *= (n - c - j) as f64 / (n - j) as f64;
    }
    Ok(1.0 - all_wrong)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub problem_id: String,
    pub n: usize,
    /// Cumulative correct samples after each round; index 0 is the initial
    /// sampling.
    pub c_by_round: Vec<usize>,
    /// The task stopped early because of a backend error.
    #[serde(default)]
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn round_counts(o: &TaskOutcome, round: usize) -> Option<(usize, usize)> {
    let before = *o.c_by_round.get(round - 1)?;
    let after = *o.c_by_round.get(round)?;
    Some((after - before, o.n - before))
}

/// Samples fixed in `round` over samples still wrong before it, pooled
/// across tasks.
pub fn refinement_success_rate(outcomes: &[TaskOutcome], round: usize) -> Result<f64, EvalError> {
    if round == 0 {
        return Err(EvalError::Domain("round must be >= 1".into()));
    }
    let (mut fixed, mut entering) = (0usize, 0usize);
    for (f, e) in outcomes.iter().filter_map(|o| round_counts(o, round)) {
        fixed += f;
        entering += e;
    }
    if entering == 0 {
        return Err(EvalError::Domain(format!("no wrong samples entered round {round}")));
    }
    Ok(fixed as f64 / entering as f64)
}

/// Mean of per-task rates over tasks that had wrong samples entering.
pub fn refinement_success_rate_macro(
    outcomes: &[TaskOutcome],
    round: usize,
) -> Result<f64, EvalError> {
    if round == 0 {
        return Err(EvalError::Domain("round must be >= 1".into()));
    }
    let rates: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| round_counts(o, round))
        .filter(|(_, e)| *e > 0)
        .map(|(f, e)| f as f64 / e as f64)
        .collect();
    if rates.is_empty() {
        return Err(EvalError::Domain(format!("no wrong samples entered round {round}")));
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Refine,
    ExplainThenRefine,
    Both,
}

impl EvalMode {
    pub fn prompt_modes(self) -> Vec<PromptMode> {
        match self {
            EvalMode::Refine => vec![PromptMode::Refine],
            EvalMode::ExplainThenRefine => vec![PromptMode::ExplainThenRefine],
            EvalMode::Both => vec![PromptMode::Refine, PromptMode::ExplainThenRefine],
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "refine" => Ok(Self::Refine),
            "explain-then-refine" => Ok(Self::ExplainThenRefine),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown eval mode {other:?}")),
        }
    }
}

pub fn mode_key(mode: PromptMode) -> &'static str {
    match mode {
        PromptMode::Refine => "refine",
        PromptMode::ExplainThenRefine => "explain-then-refine",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_initial_samples: usize,
    pub initial_temperature: f64,
    pub refinement_temperature: f64,
    pub refinements_per_wrong: usize,
    pub rounds: usize,
    pub mode: EvalMode,
    pub ks: Vec<usize>,
    pub max_tokens: u32,
    pub max_parallel_tasks: usize,
    pub max_parallel_exec: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_initial_samples: 100,
            initial_temperature: 0.8,
            refinement_temperature: 0.8,
            refinements_per_wrong: 1,
            rounds: 1,
            mode: EvalMode::Both,
            ks: vec![1, 10],
            max_tokens: 1024,
            max_parallel_tasks: 4,
            max_parallel_exec: 8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_initial_samples == 0 || self.refinements_per_wrong == 0 {
            return Err(EvalError::Config("sample counts must be positive".into()));
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k == 0 || k > self.n_initial_samples) {
            return Err(EvalError::Config(format!(
                "k={k} is outside 1..={}",
                self.n_initial_samples
            )));
        }
        Ok(())
    }
}

/// Outcomes of one benchmark run, one list per prompt mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub benchmark: String,
    pub outcomes: BTreeMap<String, Vec<TaskOutcome>>,
}

pub struct Evaluator {
    pub backend: Arc<dyn ChatBackend>,
    pub model: String,
    pub sandbox: Arc<Sandbox>,
    pub limits: Limits,
    pub shots: Vec<Shot>,
}

#[derive(Clone)]
struct Sample {
    code: Option<String>,
    report: Option<ExecutionReport>,
    correct: bool,
}

impl Evaluator {
    async fn execute(&self, p: &Problem, codes: &[&str], max_parallel: usize) -> Vec<ExecutionReport> {
        let jobs: Vec<(&str, &Problem)> = codes.iter().map(|c| (*c, p)).collect();
        self.sandbox.batch_execute(&jobs, &self.limits, max_parallel).await
    }

    async fn initial_samples(&self, p: &Problem, cfg: &EvalConfig) -> Result<Vec<Sample>, GatewayError> {
        let mut params = SamplingParams::new(cfg.initial_temperature, cfg.n_initial_samples);
        params.max_tokens = cfg.max_tokens;
        let messages = render_initial_prompt(p, &self.shots);
        let completions = complete_chat(self.backend.as_ref(), &self.model, &messages, &params).await?;
        let codes: Vec<Option<String>> = completions
            .iter()
            .map(|raw| parse_response(raw).ok().map(|r| r.code))
            .collect();
        let runnable: Vec<&str> = codes.iter().flatten().map(String::as_str).collect();
        let mut reports = self.execute(p, &runnable, cfg.max_parallel_exec).await.into_iter();
        Ok(codes
            .into_iter()
            .map(|code| match code {
                Some(code) => {
                    let report = reports.next().expect("one report per runnable sample");
                    Sample {
                        correct: classify(&report) == Verdict::Correct,
                        code: Some(code),
                        report: Some(report),
                    }
                }
                None => Sample {
                    code: None,
                    report: None,
                    correct: false,
                },
            })
            .collect())
    }

    /// Refines still-wrong samples round after round. Correct samples are
    /// frozen. Feedback always comes from the sample's latest code.
    async fn refine_chain(
        &self,
        p: &Problem,
        mut samples: Vec<Sample>,
        mode: PromptMode,
        cfg: &EvalConfig,
    ) -> TaskOutcome {
        let count = |s: &[Sample]| s.iter().filter(|x| x.correct).count();
        let mut outcome = TaskOutcome {
            problem_id: p.id.clone(),
            n: samples.len(),
            c_by_round: vec![count(&samples)],
            incomplete: false,
            error: None,
        };
        let mut params = SamplingParams::new(cfg.refinement_temperature, cfg.refinements_per_wrong);
        params.max_tokens = cfg.max_tokens;

        for _round in 1..=cfg.rounds {
            let mut pending: Vec<(usize, String)> = Vec::new();
            for (i, s) in samples.iter().enumerate() {
                if s.correct {
                    continue;
                }
                if let (Some(code), Some(report)) = (&s.code, &s.report) {
                    if let Some(feedback) = derive_feedback(report) {
                        match render_debug_prompt(p, code, &feedback, mode) {
                            Ok(m) => {
                                let completions =
                                    complete_chat(self.backend.as_ref(), &self.model, &m, &params).await;
                                match completions {
                                    Ok(c) => {
                                        for raw in c {
                                            if let Ok(parsed) = parse_response(&raw) {
                                                pending.push((i, parsed.code));
                                            }
                                        }
                                    }
                                    Err(e) => {
                                        outcome.incomplete = true;
                                        outcome.error = Some(e.to_string());
                                        return outcome;
                                    }
                                }
                            }
                            Err(e) => tracing::debug!(problem = %p.id, error = %e, "no debug prompt"),
                        }
                    }
                }
            }
            let codes: Vec<&str> = pending.iter().map(|(_, c)| c.as_str()).collect();
            let reports = self.execute(p, &codes, cfg.max_parallel_exec).await;
            let mut touched = vec![false; samples.len()];
            for ((i, code), report) in pending.iter().zip(reports) {
                let s = &mut samples[*i];
                if s.correct {
                    continue;
                }
                let correct = classify(&report) == Verdict::Correct;
                // The first refinement of a sample becomes its latest code
                // unless a later one in the same round is correct.
                if !touched[*i] || correct {
                    s.code = Some(code.clone());
                    s.report = Some(report);
                    s.correct = correct;
                    touched[*i] = true;
                }
            }
            outcome.c_by_round.push(count(&samples));
        }
        outcome
    }

    async fn run_task(&self, p: &Problem, cfg: &EvalConfig) -> Vec<(PromptMode, TaskOutcome)> {
        let modes = cfg.mode.prompt_modes();
        let samples = match self.initial_samples(p, cfg).await {
            Ok(s) => s,
            Err(e) => {
                return modes
                    .into_iter()
                    .map(|m| {
                        (
                            m,
                            TaskOutcome {
                                problem_id: p.id.clone(),
                                n: cfg.n_initial_samples,
                                c_by_round: Vec::new(),
                                incomplete: true,
                                error: Some(e.to_string()),
                            },
                        )
                    })
                    .collect()
            }
        };
        let mut out = Vec::new();
        for m in modes {
            out.push((m, self.refine_chain(p, samples.clone(), m, cfg).await));
        }
        out
    }

    pub async fn run_eval(&self, problems: &ProblemSet, cfg: &EvalConfig) -> Result<EvalRun, EvalError> {
        cfg.validate()?;
        let per_task: Vec<Vec<(PromptMode, TaskOutcome)>> = stream::iter(problems.problems.iter())
            .map(|p| self.run_task(p, cfg))
            .buffered(cfg.max_parallel_tasks.max(1))
            .collect()
            .await;
        let mut run = EvalRun {
            benchmark: problems.name.clone(),
            outcomes: BTreeMap::new(),
        };
        for task in per_task {
            for (mode, outcome) in task {
                run.outcomes.entry(mode_key(mode).to_string()).or_default().push(outcome);
            }
        }
        Ok(run)
    }
}
