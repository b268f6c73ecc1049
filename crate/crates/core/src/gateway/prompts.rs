//! Prompt rendering. All functions are pure: equal inputs give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, GatewayError};
use crate::corpus::Problem;
use crate::util::read_jsonl;

/// Tests beyond this many are executed but not shown in prompts.
const SHOWN_TESTS: usize = 3;

const SOLVE_INSTRUCTION: &str =
    "Write a Python solution for the task. Return the code in a ```python code block.";
const REFINE_INSTRUCTION: &str =
    "The code above is wrong. Please fix it and return only the corrected code in a ```python code block.";
const EXPLAIN_INSTRUCTION: &str = "The code above is wrong. Please first explain what is wrong with the code, then return the corrected code in a ```python code block.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    Refine,
    ExplainThenRefine,
}

impl PromptMode {
    pub fn instruction(self) -> &'static str {
        match self {
            PromptMode::Refine => REFINE_INSTRUCTION,
            PromptMode::ExplainThenRefine => EXPLAIN_INSTRUCTION,
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "refine" => Ok(Self::Refine),
            "explain-then-refine" => Ok(Self::ExplainThenRefine),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

/// A worked example for few-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub description: String,
    pub tests: Vec<String>,
    pub solution: String,
}

impl From<(&Problem, &str)> for Shot {
    fn from((p, solution): (&Problem, &str)) -> Self {
        Self {
            description: p.description.clone(),
            tests: p.tests.iter().map(|t| t.describe()).collect(),
            solution: solution.to_string(),
        }
    }
}

/// Reads shots from a JSONL template file, one `{description, tests,
/// solution}` object per line.
pub fn load_shots(path: &Path) -> std::io::Result<Vec<Shot>> {
    read_jsonl(path)
}

pub fn fence(code: &str) -> String {
    format!("```python\n{code}\n```")
}

fn render_task(description: &str, tests: &[String]) -> String {
    let mut s = description.trim().to_string();
    if !tests.is_empty() {
        s.push_str("\nYour code should pass these tests:\n");
        let shown: Vec<&str> = tests.iter().take(SHOWN_TESTS).map(String::as_str).collect();
        s.push_str(&shown.join("\n"));
    }
    s
}

/// Description plus the first few tests.
pub fn task_text(problem: &Problem) -> String {
    let tests: Vec<String> = problem.tests.iter().map(|t| t.describe()).collect();
    render_task(&problem.description, &tests)
}

/// Shots become user/assistant pairs; the final user turn is the task.
pub fn render_initial_prompt(problem: &Problem, shots: &[Shot]) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(shots.len() * 2 + 1);
    for shot in shots {
        messages.push(ChatMessage::user(format!(
            "{}\n{SOLVE_INSTRUCTION}",
            render_task(&shot.description, &shot.tests)
        )));
        messages.push(ChatMessage::assistant(fence(shot.solution.trim_end())));
    }
    messages.push(ChatMessage::user(format!(
        "{}\n{SOLVE_INSTRUCTION}",
        task_text(problem)
    )));
    messages
}

/// Task, the wrong code as a prior assistant turn, then the execution
/// feedback and the mode's instruction.
pub fn render_debug_prompt(
    problem: &Problem,
    wrong_code: &str,
    feedback: &str,
    mode: PromptMode,
) -> Result<Vec<ChatMessage>, GatewayError> {
    if feedback.trim().is_empty() {
        return Err(GatewayError::Invalid("execution feedback is empty".into()));
    }
    if wrong_code.trim().is_empty() {
        return Err(GatewayError::Invalid("wrong code is empty".into()));
    }
    Ok(vec![
        ChatMessage::user(task_text(problem)),
        ChatMessage::assistant(fence(wrong_code.trim_end())),
        ChatMessage::user(format!(
            "Execution feedback:\n{}\n\n{}",
            feedback.trim_end(),
            mode.instruction()
        )),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, TestCase};
    use crate::gateway::Role;

    fn problem() -> Problem {
        Problem {
            id: "t/1".into(),
            description: "Add one to x.".into(),
            tests: vec![TestCase::assertion("assert f(1) == 2")],
            reference_solutions: vec![],
            entry_point: Some("f".into()),
            source: Source::Custom,
        }
    }

    #[test]
    fn zero_shot_is_one_user_message() {
        let m = render_initial_prompt(&problem(), &[]);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].role, Role::User);
        assert!(m[0].content.contains("assert f(1) == 2"));
    }

    #[test]
    fn shots_precede_task() {
        let shot = Shot {
            description: "Double x.".into(),
            tests: vec!["assert g(2) == 4".into()],
            solution: "def g(x):\n    return 2 * x\n".into(),
        };
        let m = render_initial_prompt(&problem(), &[shot.clone(), shot.clone(), shot]);
        assert_eq!(m.len(), 7);
        assert_eq!(m[1].content, "```python\ndef g(x):\n    return 2 * x\n```");
        assert!(m[6].content.starts_with("Add one to x."));
    }

    #[test]
    fn modes_differ_only_in_instruction() {
        let a = render_debug_prompt(&problem(), "def f(x): return x", "Failed: assert f(1) == 2", PromptMode::Refine).unwrap();
        let b = render_debug_prompt(&problem(), "def f(x): return x", "Failed: assert f(1) == 2", PromptMode::ExplainThenRefine).unwrap();
        assert_eq!(a[..2], b[..2]);
        assert_eq!(
            a[2].content.replace(REFINE_INSTRUCTION, ""),
            b[2].content.replace(EXPLAIN_INSTRUCTION, "")
        );
        assert!(!a[2].content.contains("explain"));
        assert!(b[2].content.contains("explain"));
    }

    #[test]
    fn empty_feedback_rejected() {
        assert!(render_debug_prompt(&problem(), "x = 1", " ", PromptMode::Refine).is_err());
    }
}
