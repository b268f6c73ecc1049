//! JSON run configuration. String values may reference environment
//! variables as `${NAME}`; relative paths resolve against the config file.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::collector::SftConfig;
use crate::corpus::CorpusFormat;
use crate::eval::EvalConfig;
use crate::gateway::PromptMode;
use crate::ppo::KernelConfig;
use crate::rewards::CodeBleuWeights;
use crate::sandbox::Limits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    /// Drop problems whose reference solutions fail their tests.
    #[serde(default)]
    pub exclude_invalid: bool,
}

fn default_format() -> String {
    "canonical-jsonl".into()
}

impl CorpusConfig {
    pub fn format(&self) -> Result<CorpusFormat, PipelineError> {
        self.format.parse().map_err(PipelineError::Validation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Replays a transcript of `{prompt_digest, completions}` lines.
    Mock { transcript: PathBuf },
    Http {
        endpoint: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        api_key: Option<String>,
    },
}

fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExecutorConfig {
    /// Replays a verdict table keyed by problem id and code digest.
    Scripted { verdicts: PathBuf },
    Shim { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSampling {
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub mode: PromptMode,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n: 10,
            temperature: 0.8,
            max_tokens: 1024,
            mode: PromptMode::ExplainThenRefine,
        }
    }
}

impl Default for StageSampling {
    fn default() -> Self {
        Self {
            n: 20,
            temperature: 1.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_dim() -> usize {
    256
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self::Hashing { dim: default_dim() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: CodeBleuWeights,
    pub embedding: EmbeddingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub backend: BackendConfig,
    pub model: String,
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub limits: Limits,
    /// Where results are written; `--out` overrides it. Not part of the
    /// config digest.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// JSONL of few-shot exemplars for initial sampling.
    #[serde(default)]
    pub shots: Option<PathBuf>,
    #[serde(default)]
    pub initial: StageSampling,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub ppo: KernelConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default = "default_parallel")]
    pub max_parallel_exec: usize,
}

fn default_parallel() -> usize {
    8
}

/// Replaces `${NAME}` in every string value. Unset variables are an error.
pub fn interpolate_env(value: &mut serde_json::Value) -> Result<(), PipelineError> {
    static VAR: OnceLock<Regex> = OnceLock::new();
    let re = VAR.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());
    match value {
        serde_json::Value::String(s) => {
            let mut missing = None;
            let replaced = re.replace_all(s, |c: &regex::Captures| match std::env::var(&c[1]) {
                Ok(v) => v,
                Err(_) => {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                }
            });
            if let Some(name) = missing {
                return Err(PipelineError::Validation(format!(
                    "environment variable {name} is not set"
                )));
            }
            *s = replaced.into_owned();
        }
        serde_json::Value::Array(items) => {
            for v in items {
                interpolate_env(v)?;
            }
        }
        serde_json::Value::Object(map) => {
            for v in map.values_mut() {
                interpolate_env(v)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| PipelineError::Validation(format!("config is not valid JSON: {e}")))?;
        interpolate_env(&mut raw)?;
        let mut cfg: RunConfig = serde_json::from_value(raw)
            .map_err(|e| PipelineError::Validation(format!("config: {e}")))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus.path);
        if let BackendConfig::Mock { transcript } = &mut self.backend {
            resolve(base, transcript);
        }
        if let ExecutorConfig::Scripted { verdicts } = &mut self.executor {
            resolve(base, verdicts);
        }
        for p in [&mut self.output_dir, &mut self.cache_dir, &mut self.shots]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let v = |m: String| Err(PipelineError::Validation(m));
        self.corpus.format()?;
        if let Err(e) = self.limits.validate() {
            return v(e);
        }
        if let Err(e) = self.rewards.weights.validate() {
            return v(format!("rewards.weights: {e}"));
        }
        if self.initial.n == 0 || self.trajectory.n == 0 {
            return v("sample counts must be positive".into());
        }
        for (name, t) in [
            ("initial", self.initial.temperature),
            ("trajectory", self.trajectory.temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return v(format!("{name}.temperature {t} outside [0, 2]"));
            }
        }
        if let ExecutorConfig::Shim { command } = &self.executor {
            if command.is_empty() {
                return v("executor.command is empty".into());
            }
        }
        self.eval
            .validate()
            .map_err(|e| PipelineError::Validation(format!("eval: {e}")))?;
        Ok(())
    }

    /// Digest of everything that affects outputs. The output directory is
    /// left out so that runs into different directories compare equal.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        if let BackendConfig::Http { api_key, .. } = &mut c.backend {
            *api_key = None;
        }
        crate::util::sha256_hex(serde_json::to_vec(&c).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "corpus": {"path": "corpus.jsonl"},
        "backend": {"kind": "mock", "transcript": "t.jsonl"},
        "model": "m",
        "executor": {"kind": "scripted", "verdicts": "v.jsonl"}
    }"#;

    #[test]
    fn defaults_follow_stage_values() {
        let c = RunConfig::from_json(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!((c.initial.n, c.initial.temperature), (20, 1.0));
        assert_eq!((c.trajectory.n, c.trajectory.temperature), (10, 0.8));
        assert_eq!((c.eval.n_initial_samples, c.eval.initial_temperature), (100, 0.8));
        assert_eq!(c.corpus.path, Path::new("/base/corpus.jsonl"));
    }

    #[test]
    fn env_interpolation() {
        std::env::set_var("SELFDEBUG_TEST_ENDPOINT", "http://localhost:9");
        let text = MINIMAL.replace(
            r#"{"kind": "mock", "transcript": "t.jsonl"}"#,
            r#"{"kind": "http", "endpoint": "${SELFDEBUG_TEST_ENDPOINT}/v1"}"#,
        );
        let c = RunConfig::from_json(&text, Path::new(".")).unwrap();
        assert!(matches!(c.backend, BackendConfig::Http { ref endpoint, .. } if endpoint == "http://localhost:9/v1"));
        let missing = MINIMAL.replace("\"m\"", "\"${SELFDEBUG_SURELY_UNSET_VAR}\"");
        assert!(matches!(
            RunConfig::from_json(&missing, Path::new(".")),
            Err(PipelineError::Validation(_))
        ));
    }

    #[test]
    fn digest_ignores_output_dir() {
        let mut a = RunConfig::from_json(MINIMAL, Path::new(".")).unwrap();
        let d = a.digest();
        a.output_dir = Some("elsewhere".into());
        assert_eq!(a.digest(), d);
        a.initial.n = 3;
        assert_ne!(a.digest(), d);
    }
}
