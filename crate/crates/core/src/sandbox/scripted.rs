use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ExecutionReport, ExecutionStatus, Executor, Limits, SandboxError, TestVerdict};
use crate::corpus::Problem;
use crate::util::{read_jsonl, sha256_hex};

/// One row of a verdict table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedVerdict {
    pub problem_id: String,
    pub code_sha256: String,
    pub status: ExecutionStatus,
    pub per_test: Vec<TestVerdict>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Replays verdicts keyed by `(problem id, sha256 of code)`. Unknown
/// candidates are a sandbox failure.
#[derive(Debug, Default)]
pub struct ScriptedExecutor {
    table: HashMap<(String, String), ScriptedVerdict>,
    source: String,
}

impl ScriptedExecutor {
    pub fn new(rows: impl IntoIterator<Item = ScriptedVerdict>) -> Self {
        let table = rows
            .into_iter()
            .map(|r| ((r.problem_id.clone(), r.code_sha256.clone()), r))
            .collect();
        Self {
            table,
            source: "inline".into(),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let rows: Vec<ScriptedVerdict> = read_jsonl(path)?;
        let bytes = std::fs::read(path)?;
        let mut exec = Self::new(rows);
        exec.source = sha256_hex(bytes);
        Ok(exec)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

#[async_trait]
impl Executor for ScriptedExecutor {
    async fn execute(
        &self,
        code: &str,
        problem: &Problem,
        _limits: &Limits,
    ) -> Result<ExecutionReport, SandboxError> {
        let hash = sha256_hex(code);
        let row = self
            .table
            .get(&(problem.id.clone(), hash.clone()))
            .ok_or_else(|| SandboxError::Unscripted {
                problem_id: problem.id.clone(),
                code_sha256: hash.clone(),
            })?;
        Ok(ExecutionReport {
            candidate_hash: hash,
            per_test: row.per_test.clone(),
            wall_ms: 0,
            status: row.status,
            error: row.error.clone(),
            cache_hit: false,
        })
    }

    fn describe(&self) -> String {
        format!("scripted:{}", self.source)
    }
}
