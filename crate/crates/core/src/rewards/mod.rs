//! Refinement and explanation rewards.
//!
//! `s_cb` is mean CodeBLEU against the verified refinements of the same wrong
//! solution, `s_ut` the fraction of passed tests, and `s_ex` the mean cosine
//! between an explanation and the explanations attached to verified
//! refinements. The rewards are
//!
//! ```text
//! r_code = 5 * (s_cb + s_ut) - 5
//! r_expl = (50 * s_ex - 35) / 3        clamped to -5 below s_ex = 0.4
//! ```

mod embed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{Attempt, Trajectory};
use crate::sandbox::{ExecutionReport, ExecutionStatus, Verdict};
use crate::util::compensated_mean;

pub use codebleu::{codebleu, CodeBleuScore, CodeBleuWeights, Diagnostics as CodeBleuDiagnostics};
pub use embed::{cosine, EmbeddingProvider, EmbeddingVector, HashingEmbedder, RemoteEmbedder};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    Domain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("report is a sandbox failure and carries no test outcome")]
    SandboxFailure,
    #[error("embedding provider: {0}")]
    Provider(String),
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), RewardError> {
    if value.is_nan() || value < lo || value > hi {
        return Err(RewardError::Domain { name, value, lo, hi });
    }
    Ok(())
}

/// Mean CodeBLEU of `refinement` against each verified refinement.
pub fn s_cb(
    refinement: &str,
    verified: &[&str],
    weights: &CodeBleuWeights,
) -> Result<f64, RewardError> {
    let scores: Vec<f64> = verified
        .iter()
        .map(|v| codebleu(refinement, v, weights).codebleu)
        .collect();
    compensated_mean(&scores).ok_or(RewardError::EmptyReferenceSet)
}

/// Passed fraction for completed runs; every other status scores 0.
pub fn s_ut(report: &ExecutionReport) -> Result<f64, RewardError> {
    match report.status {
        ExecutionStatus::SandboxFailure => Err(RewardError::SandboxFailure),
        ExecutionStatus::Completed if !report.per_test.is_empty() => {
            Ok(report.n_passed() as f64 / report.per_test.len() as f64)
        }
        _ => Ok(0.0),
    }
}

/// Mean cosine between the explanation and each ground-truth explanation.
pub async fn s_ex(
    explanation: &str,
    ground_truth: &[&str],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, RewardError> {
    if ground_truth.is_empty() {
        return Err(RewardError::EmptyReferenceSet);
    }
    let mut texts = Vec::with_capacity(ground_truth.len() + 1);
    texts.push(explanation.to_string());
    texts.extend(ground_truth.iter().map(|s| s.to_string()));
    let vectors = provider.embed_batch(&texts).await?;
    let (first, rest) = vectors.split_first().expect("at least one text");
    let sims: Vec<f64> = rest.iter().map(|v| cosine(first, v)).collect();
    let mean = compensated_mean(&sims).expect("ground truth is nonempty");
    Ok(mean.clamp(-1.0, 1.0))
}

pub fn reward_refinement(s_cb: f64, s_ut: f64) -> Result<f64, RewardError> {
    check_range("s_cb", s_cb, 0.0, 1.0)?;
    check_range("s_ut", s_ut, 0.0, 1.0)?;
    Ok(5.0 * (s_cb + s_ut) - 5.0)
}

/// Maps [0.4, 1.0] linearly onto [-5, 5], with 0.7 landing on 0.
pub fn reward_explanation(s_ex: f64) -> Result<f64, RewardError> {
    check_range("s_ex", s_ex, -1.0, 1.0)?;
    if s_ex < 0.4 {
        return Ok(-5.0);
    }
    Ok((50.0 * s_ex - 35.0) / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub s_cb: f64,
    pub s_ut: f64,
    pub s_ex: Option<f64>,
    pub r_code: f64,
    pub r_expl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardDiagnostics {
    /// The wrong solution has no verified refinement, so no reward exists.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped_no_verified: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped_sandbox_failure: bool,
    /// Some CodeBLEU comparison fell back to n-gram components.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub codebleu_fallback: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_explanation: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_code: bool,
}

/// One line of `rewards.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub attempt_id: String,
    pub trajectory_id: String,
    pub s_cb: Option<f64>,
    pub s_ut: Option<f64>,
    pub s_ex: Option<f64>,
    pub r_code: Option<f64>,
    pub r_expl: Option<f64>,
    pub diagnostics: RewardDiagnostics,
}

impl RewardRecord {
    pub fn bundle(&self) -> Option<RewardBundle> {
        Some(RewardBundle {
            s_cb: self.s_cb?,
            s_ut: self.s_ut?,
            s_ex: self.s_ex,
            r_code: self.r_code?,
            r_expl: self.r_expl,
        })
    }
}

fn skipped(attempt: &Attempt, trajectory: &Trajectory, diagnostics: RewardDiagnostics) -> RewardRecord {
    RewardRecord {
        attempt_id: attempt.id.clone(),
        trajectory_id: trajectory.id.clone(),
        s_cb: None,
        s_ut: None,
        s_ex: None,
        r_code: None,
        r_expl: None,
        diagnostics,
    }
}

/// Scores every refinement in a trajectory against the trajectory's own
/// verified refinements. Without any verified refinement the rewards are
/// undefined; such refinements get a record with empty scores and
/// `skipped_no_verified` set.
pub async fn score_trajectory(
    trajectory: &Trajectory,
    weights: &CodeBleuWeights,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<RewardRecord>, RewardError> {
    let verified: Vec<&Attempt> = trajectory
        .refinements
        .iter()
        .filter(|a| a.verdict == Verdict::Correct)
        .collect();
    let verified_code: Vec<&str> = verified.iter().map(|a| a.code.as_str()).collect();
    let verified_expl: Vec<&str> = verified
        .iter()
        .filter_map(|a| a.explanation.as_deref())
        .filter(|e| !e.trim().is_empty())
        .collect();

    let mut out = Vec::with_capacity(trajectory.refinements.len());
    for attempt in &trajectory.refinements {
        if verified.is_empty() {
            out.push(skipped(
                attempt,
                trajectory,
                RewardDiagnostics {
                    skipped_no_verified: true,
                    ..Default::default()
                },
            ));
            continue;
        }
        if attempt.report.status == ExecutionStatus::SandboxFailure {
            out.push(skipped(
                attempt,
                trajectory,
                RewardDiagnostics {
                    skipped_sandbox_failure: true,
                    ..Default::default()
                },
            ));
            continue;
        }
        let mut diagnostics = RewardDiagnostics {
            no_code: attempt.no_code,
            ..Default::default()
        };
        let cb = if attempt.no_code {
            0.0
        } else {
            let scores: Vec<CodeBleuScore> = verified_code
                .iter()
                .map(|v| codebleu(&attempt.code, v, weights))
                .collect();
            diagnostics.codebleu_fallback = scores.iter().any(|s| s.diagnostics.fallback_applied);
            let values: Vec<f64> = scores.iter().map(|s| s.codebleu).collect();
            compensated_mean(&values).expect("verified is nonempty")
        };
        let ut = s_ut(&attempt.report)?;
        let (ex, r_expl) = match attempt.explanation.as_deref() {
            Some(e) if !e.trim().is_empty() && !verified_expl.is_empty() => {
                let ex = s_ex(e, &verified_expl, provider).await?;
                (Some(ex), Some(reward_explanation(ex)?))
            }
            _ => {
                diagnostics.no_explanation = true;
                (None, None)
            }
        };
        out.push(RewardRecord {
            attempt_id: attempt.id.clone(),
            trajectory_id: trajectory.id.clone(),
            s_cb: Some(cb),
            s_ut: Some(ut),
            s_ex: ex,
            r_code: Some(reward_refinement(cb.clamp(0.0, 1.0), ut)?),
            r_expl,
            diagnostics,
        });
    }
    Ok(out)
}
