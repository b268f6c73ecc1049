//! Chat-formatted training records with byte-span loss masks.

use serde::{Deserialize, Serialize};

use super::{Attempt, Trajectory};
use crate::corpus::ProblemSet;
use crate::gateway::{fence, render_debug_prompt, render_initial_prompt, ChatMessage, PromptMode, Role};
use crate::sandbox::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SftFormat {
    /// Single-turn solution to the task.
    Generate,
    Refine,
    ExplainThenRefine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub rendered: String,
    /// Sorted, disjoint `[start, end)` byte ranges on which loss is computed.
    pub mask_spans: Vec<[usize; 2]>,
    pub format: SftFormat,
    /// Trajectory id for refinement records, attempt id for generation ones.
    pub provenance: String,
}

impl SftRecord {
    pub fn masked_text(&self) -> String {
        self.mask_spans
            .iter()
            .map(|[s, e]| &self.rendered[*s..*e])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    /// Verified refinements used per wrong solution, by earliest sample.
    pub max_per_wrong: usize,
    pub include_generation: bool,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            max_per_wrong: 3,
            include_generation: true,
        }
    }
}

fn push_turn(out: &mut String, role: Role, content: &str) -> [usize; 2] {
    out.push_str("<|");
    out.push_str(role.as_str());
    out.push_str("|>\n");
    let start = out.len();
    out.push_str(content);
    let end = out.len();
    out.push_str("<|end|>\n");
    [start, end]
}

/// Renders `context` followed by an assistant `answer` in the
/// `<|role|>\n...<|end|>\n` grammar. Returns the text and the byte span of
/// the answer. The closing marker is outside the span.
pub fn render_chat(context: &[ChatMessage], answer: &str) -> (String, [usize; 2]) {
    let mut out = String::new();
    for m in context {
        push_turn(&mut out, m.role, &m.content);
    }
    let span = push_turn(&mut out, Role::Assistant, answer);
    (out, span)
}

fn explain_answer(explanation: &str, code: &str) -> String {
    format!("{}\n\n{}", explanation.trim(), fence(code))
}

/// Two records per selected verified refinement, one per instruction
/// format. The explain-then-refine record needs an explanation; a
/// refinement without one yields only the refine record. Correct initial
/// solutions become single-turn generation records.
pub fn build_sft_dataset(
    trajectories: &[Trajectory],
    correct_initials: &[Attempt],
    problems: &ProblemSet,
    config: &SftConfig,
) -> Vec<SftRecord> {
    let mut out = Vec::new();
    for t in trajectories {
        let Some(problem) = problems.get(&t.problem_id) else {
            tracing::warn!(trajectory = %t.id, "problem missing from corpus; skipped");
            continue;
        };
        let mut verified: Vec<&Attempt> = t.verified().collect();
        verified.sort_by_key(|a| a.sample_index);
        verified.truncate(config.max_per_wrong);
        for r in verified {
            for mode in [PromptMode::Refine, PromptMode::ExplainThenRefine] {
                let answer = match mode {
                    PromptMode::Refine => fence(&r.code),
                    PromptMode::ExplainThenRefine => match r.explanation.as_deref() {
                        Some(e) if !e.trim().is_empty() => explain_answer(e, &r.code),
                        _ => continue,
                    },
                };
                let context = render_debug_prompt(problem, &t.wrong.code, &t.feedback, mode)
                    .expect("trajectories carry feedback and code");
                let (rendered, span) = render_chat(&context, &answer);
                out.push(SftRecord {
                    rendered,
                    mask_spans: vec![span],
                    format: match mode {
                        PromptMode::Refine => SftFormat::Refine,
                        PromptMode::ExplainThenRefine => SftFormat::ExplainThenRefine,
                    },
                    provenance: t.id.clone(),
                });
            }
        }
    }
    if config.include_generation {
        for a in correct_initials.iter().filter(|a| a.verdict == Verdict::Correct) {
            let Some(problem) = problems.get(&a.problem_id) else {
                continue;
            };
            let (rendered, span) = render_chat(&render_initial_prompt(problem, &[]), &fence(&a.code));
            out.push(SftRecord {
                rendered,
                mask_spans: vec![span],
                format: SftFormat::Generate,
                provenance: a.id.clone(),
            });
        }
    }
    if out.is_empty() {
        tracing::info!("no verified trajectories or correct solutions; SFT dataset is empty");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::parse_response;

    #[test]
    fn span_is_exactly_the_answer() {
        let ctx = vec![ChatMessage::user("task"), ChatMessage::assistant("wrong")];
        let (text, [s, e]) = render_chat(&ctx, "fixed");
        assert_eq!(&text[s..e], "fixed");
        assert_eq!(
            text,
            "<|user|>\ntask<|end|>\n<|assistant|>\nwrong<|end|>\n<|assistant|>\nfixed<|end|>\n"
        );
    }

    #[test]
    fn answers_round_trip_through_the_parser() {
        let code = "def f(x):\n    return x + 1";
        let p = parse_response(&explain_answer("  The loop is off by one.\n", code)).unwrap();
        assert_eq!(p.explanation.as_deref(), Some("The loop is off by one."));
        assert_eq!(p.code, code);
        let p = parse_response(&fence(code)).unwrap();
        assert_eq!(p.explanation, None);
        assert_eq!(p.code, code);
    }
}
