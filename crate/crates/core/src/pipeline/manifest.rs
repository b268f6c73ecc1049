use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::collector::CollectionStats;
use crate::util::{sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest over everything the stage read.
    pub inputs_digest: String,
    /// Output file name to sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Everything needed to tell whether a rerun would reproduce the outputs.
/// Only `stage_timings` varies between identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub corpus_digest: String,
    /// Transcript digest for the mock backend, endpoint for a live one.
    pub backend: String,
    pub executor: String,
    #[serde(default)]
    pub stats: Option<CollectionStats>,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
    /// Wall-clock milliseconds per stage.
    #[serde(default)]
    pub stage_timings: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn record(
        &mut self,
        stage: &str,
        inputs_digest: String,
        outputs: BTreeMap<String, String>,
        took: Duration,
    ) {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                inputs_digest,
                outputs,
            },
        );
        self.stage_timings
            .insert(stage.to_string(), took.as_millis() as u64);
    }

    /// True when `stage` ran with the same inputs and its outputs are still
    /// on disk unchanged.
    pub fn reusable(&self, stage: &str, inputs_digest: &str, dir: &Path) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.inputs_digest == inputs_digest
            && rec.outputs.iter().all(|(name, digest)| {
                std::fs::read(dir.join(name))
                    .map(|b| &sha256_hex(b) == digest)
                    .unwrap_or(false)
            })
    }
}
