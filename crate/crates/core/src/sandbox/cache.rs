use std::path::{Path, PathBuf};

use dashmap::DashMap;

use super::ExecutionReport;

/// Content-addressed store of execution reports. Always backed by memory;
/// optionally also by a directory laid out as `<2 hex>/<digest>.json`.
#[derive(Debug, Default)]
pub struct ResultCache {
    memory: DashMap<String, ExecutionReport>,
    dir: Option<PathBuf>,
}

impl ResultCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            memory: DashMap::new(),
            dir: Some(dir.into()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn file_for(&self, key: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        Some(dir.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<ExecutionReport> {
        if let Some(r) = self.memory.get(key) {
            return Some(r.clone());
        }
        let path = self.file_for(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        // An unreadable entry is treated as a miss and rewritten later.
        let report: ExecutionReport = serde_json::from_str(&text).ok()?;
        self.memory.insert(key.to_string(), report.clone());
        Some(report)
    }

    pub fn put(&self, key: &str, report: &ExecutionReport) {
        let mut stored = report.clone();
        stored.cache_hit = false;
        if let Some(path) = self.file_for(key) {
            let bytes = serde_json::to_vec(&stored).expect("reports serialize");
            if let Err(e) = crate::util::write_atomic(&path, &bytes) {
                tracing::warn!(path = %path.display(), error = %e, "cannot write cache entry");
            }
        }
        self.memory.insert(key.to_string(), stored);
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }
}
