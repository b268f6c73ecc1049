use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatMessage, GatewayError, SamplingParams};
use crate::util::{read_jsonl, sha256_hex, to_jsonl};

/// sha256 of the compact JSON encoding of the message list.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    sha256_hex(serde_json::to_vec(messages).expect("messages serialize"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_digest: String,
    pub completions: Vec<String>,
}

/// Builder for transcript files. Entries keep insertion order.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn push(&mut self, messages: &[ChatMessage], completions: Vec<String>) {
        self.entries.push(TranscriptEntry {
            prompt_digest: prompt_digest(messages),
            completions,
        });
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.entries).expect("entries serialize")
    }
}

/// Replays completions keyed by prompt digest. A request for `n` returns
/// the first `n` scripted completions. Entries sharing a digest are
/// concatenated in file order.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    table: HashMap<String, Vec<String>>,
    fingerprint: String,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut table: HashMap<String, Vec<String>> = HashMap::new();
        for e in entries {
            table.entry(e.prompt_digest).or_default().extend(e.completions);
        }
        Self {
            table,
            fingerprint: "inline".into(),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let entries: Vec<TranscriptEntry> = read_jsonl(path)?;
        let mut b = Self::new(entries);
        b.fingerprint = sha256_hex(std::fs::read(path)?);
        Ok(b)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(
        &self,
        _model: &str,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        let digest = prompt_digest(messages);
        let scripted = self
            .table
            .get(&digest)
            .ok_or(GatewayError::Unscripted { digest })?;
        if scripted.len() < params.n {
            return Err(GatewayError::ShortCompletion {
                expected: params.n,
                got: scripted.len(),
            });
        }
        Ok(scripted[..params.n].to_vec())
    }

    fn fingerprint(&self) -> String {
        format!("transcript:{}", self.fingerprint)
    }
}
