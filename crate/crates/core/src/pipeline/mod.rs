//! Stage runners behind the command line: configuration, backends, output
//! files and the run manifest.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{
    build_sft_dataset, compute_stats, Attempt, CollectionStats, Collector, Origin, StageFailure,
    Trajectory,
};
use crate::corpus::{
    corpus_to_jsonl, load_corpus, validate_problem, CorpusError, ProblemSet, ValidationReport,
};
use crate::eval::{render_report, EvalReport, EvalRun, Evaluator, ReportFormat};
use crate::gateway::{
    load_shots, render_debug_prompt, ChatBackend, ChatMessage, HttpBackend, HttpConfig,
    SamplingParams, ScriptedBackend, Shot,
};
use crate::ppo::{process_sample, BatchInput, BatchOutput, KernelConfig};
use crate::rewards::{score_trajectory, EmbeddingProvider, HashingEmbedder, RemoteEmbedder, RewardRecord};
use crate::sandbox::{ResultCache, Sandbox, ScriptedExecutor, ShimExecutor, Verdict};
use crate::util::{read_jsonl, sha256_hex, write_atomic, write_jsonl, FieldHasher};

pub use config::{
    interpolate_env, BackendConfig, CorpusConfig, EmbeddingConfig, ExecutorConfig, RewardConfig,
    RunConfig, StageSampling, TrajectoryConfig,
};
pub use manifest::{RunManifest, StageRecord, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backend failure: {0}")]
    Backend(String),
}

impl PipelineError {
    /// 2 for backend failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Backend(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub const ATTEMPTS_FILE: &str = "attempts.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const RL_POOL_FILE: &str = "rl_pool.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const SFT_FILE: &str = "sft.jsonl";
pub const REWARDS_FILE: &str = "rewards.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_TABLE_FILE: &str = "eval.md";
pub const EVAL_OUTCOMES_FILE: &str = "eval_outcomes.jsonl";

/// One line of `rl_pool.jsonl`: a trajectory with the prompt its
/// refinements answered. Trajectories without a verified refinement are
/// included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlPoolEntry {
    pub has_verified: bool,
    pub prompt: Vec<ChatMessage>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub reused: bool,
    pub stats: CollectionStats,
    pub n_trajectories: usize,
    pub n_failures: usize,
}

fn pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_jsonl(path).map_err(PipelineError::io(path))
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: RunConfig, out_dir: Option<PathBuf>) -> Result<Self, PipelineError> {
        let out_dir = out_dir
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| PipelineError::Validation("no output directory (use --out)".into()))?;
        Ok(Self { config, out_dir })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn load_corpus(&self) -> Result<ProblemSet, PipelineError> {
        Ok(load_corpus(&self.config.corpus.path, self.config.corpus.format()?)?)
    }

    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, PipelineError> {
        Ok(match &self.config.backend {
            BackendConfig::Mock { transcript } => Arc::new(
                ScriptedBackend::from_file(transcript).map_err(PipelineError::io(transcript))?,
            ),
            BackendConfig::Http {
                endpoint,
                max_in_flight,
                api_key,
            } => {
                let mut c = HttpConfig::new(endpoint.clone());
                c.max_in_flight = *max_in_flight;
                if api_key.is_some() {
                    c.api_key = api_key.clone();
                }
                Arc::new(HttpBackend::new(c).map_err(|e| PipelineError::Backend(e.to_string()))?)
            }
        })
    }

    pub fn sandbox(&self) -> Result<Arc<Sandbox>, PipelineError> {
        let sandbox = match &self.config.executor {
            ExecutorConfig::Scripted { verdicts } => Sandbox::new(Arc::new(
                ScriptedExecutor::from_file(verdicts).map_err(PipelineError::io(verdicts))?,
            )),
            ExecutorConfig::Shim { command } => Sandbox::new(Arc::new(
                ShimExecutor::new(command.clone())
                    .map_err(|e| PipelineError::Validation(e.to_string()))?,
            )),
        };
        Ok(Arc::new(match &self.config.cache_dir {
            Some(dir) => sandbox.with_cache(ResultCache::on_disk(dir)),
            None => sandbox,
        }))
    }

    fn shots(&self) -> Result<Vec<Shot>, PipelineError> {
        match &self.config.shots {
            Some(p) => load_shots(p).map_err(PipelineError::io(p)),
            None => Ok(Vec::new()),
        }
    }

    fn manifest(&self) -> RunManifest {
        RunManifest::load(&self.out(MANIFEST_FILE)).unwrap_or_default()
    }

    fn base_manifest(&self, corpus: &ProblemSet, backend: &str, executor: &str) -> RunManifest {
        let mut m = self.manifest();
        m.config_digest = self.config.digest();
        m.corpus_digest = sha256_hex(corpus_to_jsonl(corpus));
        m.backend = backend.to_string();
        m.executor = executor.to_string();
        m
    }

    fn write_outputs(&self, files: &[(&str, Vec<u8>)]) -> Result<StageRecordOutputs, PipelineError> {
        let mut outputs = StageRecordOutputs::new();
        for (name, bytes) in files {
            let path = self.out(name);
            write_atomic(&path, bytes).map_err(PipelineError::io(&path))?;
            outputs.insert(name.to_string(), sha256_hex(bytes));
        }
        Ok(outputs)
    }

    /// Runs every problem's reference solutions. Failing problems are
    /// flagged in the returned reports and dropped only when the corpus
    /// config asks for it.
    async fn validate_corpus(
        &self,
        corpus: ProblemSet,
        sandbox: &Sandbox,
    ) -> (ProblemSet, Vec<ValidationReport>) {
        let mut reports = Vec::with_capacity(corpus.len());
        let mut kept = Vec::with_capacity(corpus.len());
        for p in corpus.problems {
            let report = match validate_problem(&p, sandbox, &self.config.limits).await {
                Ok(r) => r,
                Err(e) => ValidationReport {
                    problem_id: p.id.clone(),
                    ok: false,
                    solutions: Vec::new(),
                    note: Some(format!("validation could not run: {e}")),
                },
            };
            if !report.ok {
                tracing::warn!(problem = %p.id, note = ?report.note, "reference solution fails its tests");
            }
            if report.ok || !self.config.corpus.exclude_invalid {
                kept.push(p);
            }
            reports.push(report);
        }
        (
            ProblemSet {
                problems: kept,
                ..corpus
            },
            reports,
        )
    }

    /// Samples initial solutions, collects trajectories for the wrong ones
    /// and writes attempts, trajectories, the RL pool and statistics.
    pub async fn collect(&self, force: bool) -> Result<CollectSummary, PipelineError> {
        let started = Instant::now();
        let backend = self.backend()?;
        let sandbox = self.sandbox()?;
        let corpus = self.load_corpus()?;
        let mut manifest = self.base_manifest(&corpus, &backend.fingerprint(), &sandbox.describe());
        let inputs = FieldHasher::new()
            .field(&manifest.config_digest)
            .field(&manifest.corpus_digest)
            .field(&manifest.backend)
            .field(&manifest.executor)
            .finish();
        if !force && manifest.reusable("collect", &inputs, &self.out_dir) {
            let stats: CollectionStats = serde_json::from_slice(
                &std::fs::read(self.out(STATS_FILE)).map_err(PipelineError::io(&self.out(STATS_FILE)))?,
            )
            .map_err(|e| PipelineError::Validation(format!("{STATS_FILE}: {e}")))?;
            tracing::info!("collect outputs are up to date; reusing");
            return Ok(CollectSummary {
                reused: true,
                stats,
                n_trajectories: 0,
                n_failures: 0,
            });
        }

        let (corpus, validation) = self.validate_corpus(corpus, &sandbox).await;
        let mut collector = Collector::new(backend, self.config.model.clone(), sandbox);
        collector.limits = self.config.limits;
        collector.max_parallel_requests = self.config.max_parallel_requests;
        collector.max_parallel_exec = self.config.max_parallel_exec;
        collector.shots = self.shots()?;

        let initial_params = SamplingParams {
            temperature: self.config.initial.temperature,
            n: self.config.initial.n,
            max_tokens: self.config.initial.max_tokens,
            seed: self.config.seed,
        };
        let sampled = collector.sample_initial(&corpus, &initial_params).await;
        if !corpus.is_empty() && sampled.failures.len() == corpus.len() {
            return Err(PipelineError::Backend(format!(
                "every problem failed during sampling; first error: {}",
                sampled.failures[0].error
            )));
        }
        let wrong: Vec<Attempt> = sampled
            .attempts
            .iter()
            .filter(|a| a.verdict == Verdict::Wrong && a.report.status != crate::sandbox::ExecutionStatus::SandboxFailure)
            .cloned()
            .collect();
        let traj_params = SamplingParams {
            temperature: self.config.trajectory.temperature,
            n: self.config.trajectory.n,
            max_tokens: self.config.trajectory.max_tokens,
            seed: self.config.seed,
        };
        let collected = collector
            .collect_trajectories(&corpus, &wrong, &traj_params, self.config.trajectory.mode)
            .await;

        let stats = compute_stats(&sampled.attempts, &collected.trajectories);
        let mut all_attempts = sampled.attempts.clone();
        all_attempts.extend(collected.trajectories.iter().flat_map(|t| t.refinements.iter().cloned()));
        let verified: Vec<&Trajectory> = collected.trajectories.iter().filter(|t| t.has_verified()).collect();
        let pool: Vec<RlPoolEntry> = collected
            .trajectories
            .iter()
            .map(|t| {
                let problem = corpus.get(&t.problem_id).expect("trajectory problem is in corpus");
                RlPoolEntry {
                    has_verified: t.has_verified(),
                    prompt: render_debug_prompt(problem, &t.wrong.code, &t.feedback, t.mode)
                        .expect("trajectories carry feedback and code"),
                    trajectory: t.clone(),
                }
            })
            .collect();
        let mut failures: Vec<StageFailure> = sampled.failures.clone();
        failures.extend(collected.failures.iter().cloned());

        let jsonl = |v: &dyn Fn() -> serde_json::Result<String>| v().expect("serializable").into_bytes();
        let outputs = self.write_outputs(&[
            (ATTEMPTS_FILE, jsonl(&|| crate::util::to_jsonl(&all_attempts))),
            (TRAJECTORIES_FILE, jsonl(&|| crate::util::to_jsonl(&verified))),
            (RL_POOL_FILE, jsonl(&|| crate::util::to_jsonl(&pool))),
            (FAILURES_FILE, jsonl(&|| crate::util::to_jsonl(&failures))),
            (STATS_FILE, pretty_json(&stats)),
            (VALIDATION_FILE, jsonl(&|| crate::util::to_jsonl(&validation))),
        ])?;
        manifest.record("collect", inputs, outputs, started.elapsed());
        manifest.stats = Some(stats.clone());
        manifest.save(&self.out(MANIFEST_FILE)).map_err(PipelineError::io(&self.out(MANIFEST_FILE)))?;
        Ok(CollectSummary {
            reused: false,
            stats,
            n_trajectories: collected.trajectories.len(),
            n_failures: failures.len(),
        })
    }

    /// Builds `sft.jsonl` from the collect outputs in the output directory.
    pub fn build_sft(&self, force: bool) -> Result<usize, PipelineError> {
        let started = Instant::now();
        let corpus = self.load_corpus()?;
        let traj_path = self.out(TRAJECTORIES_FILE);
        let att_path = self.out(ATTEMPTS_FILE);
        let traj_bytes = std::fs::read(&traj_path).map_err(PipelineError::io(&traj_path))?;
        let att_bytes = std::fs::read(&att_path).map_err(PipelineError::io(&att_path))?;
        let mut manifest = self.manifest();
        let inputs = FieldHasher::new()
            .field(sha256_hex(&traj_bytes))
            .field(sha256_hex(&att_bytes))
            .field(sha256_hex(corpus_to_jsonl(&corpus)))
            .field(serde_json::to_vec(&self.config.sft).expect("config serializes"))
            .finish();
        if !force && manifest.reusable("build-sft", &inputs, &self.out_dir) {
            tracing::info!("sft dataset is up to date; reusing");
            return Ok(read_lines::<serde_json::Value>(&self.out(SFT_FILE))?.len());
        }
        let trajectories: Vec<Trajectory> = read_lines(&traj_path)?;
        let attempts: Vec<Attempt> = read_lines(&att_path)?;
        let correct: Vec<Attempt> = attempts
            .into_iter()
            .filter(|a| a.origin == Origin::Initial && a.verdict == Verdict::Correct)
            .collect();
        let records = build_sft_dataset(&trajectories, &correct, &corpus, &self.config.sft);
        let bytes = crate::util::to_jsonl(&records).expect("records serialize").into_bytes();
        let outputs = self.write_outputs(&[(SFT_FILE, bytes)])?;
        manifest.record("build-sft", inputs, outputs, started.elapsed());
        manifest.save(&self.out(MANIFEST_FILE)).map_err(PipelineError::io(&self.out(MANIFEST_FILE)))?;
        Ok(records.len())
    }

    fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
        Ok(match &self.config.rewards.embedding {
            EmbeddingConfig::Hashing { dim } => Box::new(HashingEmbedder::new(*dim)),
            EmbeddingConfig::Remote {
                endpoint,
                max_in_flight,
            } => Box::new(
                RemoteEmbedder::new(endpoint.clone(), *max_in_flight)
                    .map_err(|e| PipelineError::Backend(e.to_string()))?,
            ),
        })
    }

    /// Scores every refinement in an RL pool and writes `rewards.jsonl`.
    pub async fn score(&self, pool_path: Option<&Path>) -> Result<Vec<RewardRecord>, PipelineError> {
        let started = Instant::now();
        let default_pool = self.out(RL_POOL_FILE);
        let pool_path = pool_path.unwrap_or(&default_pool);
        let pool_bytes = std::fs::read(pool_path).map_err(PipelineError::io(pool_path))?;
        let pool: Vec<RlPoolEntry> = read_lines(pool_path)?;
        let provider = self.embedder()?;
        let mut records = Vec::new();
        for entry in &pool {
            let scored = score_trajectory(&entry.trajectory, &self.config.rewards.weights, provider.as_ref())
                .await
                .map_err(|e| match e {
                    crate::rewards::RewardError::Provider(m) => PipelineError::Backend(m),
                    other => PipelineError::Validation(other.to_string()),
                })?;
            records.extend(scored);
        }
        let bytes = crate::util::to_jsonl(&records).expect("records serialize").into_bytes();
        let outputs = self.write_outputs(&[(REWARDS_FILE, bytes)])?;
        let mut manifest = self.manifest();
        let inputs = FieldHasher::new()
            .field(sha256_hex(&pool_bytes))
            .field(serde_json::to_vec(&self.config.rewards).expect("config serializes"))
            .field(provider.provider_id())
            .finish();
        manifest.record("score", inputs, outputs, started.elapsed());
        manifest.save(&self.out(MANIFEST_FILE)).map_err(PipelineError::io(&self.out(MANIFEST_FILE)))?;
        Ok(records)
    }

    /// Runs the evaluation loop and writes `eval.json` and per-task outcomes.
    pub async fn evaluate(&self, cfg: &crate::eval::EvalConfig) -> Result<EvalReport, PipelineError> {
        let started = Instant::now();
        let backend = self.backend()?;
        let sandbox = self.sandbox()?;
        let corpus = self.load_corpus()?;
        let mut manifest = self.base_manifest(&corpus, &backend.fingerprint(), &sandbox.describe());
        let corpus = if self.config.corpus.exclude_invalid {
            self.validate_corpus(corpus, &sandbox).await.0
        } else {
            corpus
        };
        let evaluator = Evaluator {
            backend,
            model: self.config.model.clone(),
            sandbox,
            limits: self.config.limits,
            shots: self.shots()?,
        };
        let run: EvalRun = evaluator
            .run_eval(&corpus, cfg)
            .await
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        let n_tasks = corpus.len();
        let all_failed = run
            .outcomes
            .values()
            .all(|o| o.iter().all(|t| t.incomplete && t.c_by_round.is_empty()));
        if n_tasks > 0 && all_failed {
            let first = run.outcomes.values().flatten().find_map(|t| t.error.clone()).unwrap_or_default();
            return Err(PipelineError::Backend(format!("every task failed: {first}")));
        }
        let mut report = EvalReport::new(cfg.ks.clone());
        report.add_run(&run);
        let outcomes: Vec<serde_json::Value> = run
            .outcomes
            .iter()
            .flat_map(|(mode, list)| {
                list.iter().map(move |o| serde_json::json!({"mode": mode, "outcome": o}))
            })
            .collect();
        let outputs = self.write_outputs(&[
            (EVAL_FILE, render_report(&report, ReportFormat::Json).into_bytes()),
            (EVAL_TABLE_FILE, render_report(&report, ReportFormat::Markdown).into_bytes()),
            (EVAL_OUTCOMES_FILE, crate::util::to_jsonl(&outcomes).expect("json").into_bytes()),
        ])?;
        let inputs = FieldHasher::new()
            .field(&manifest.config_digest)
            .field(&manifest.corpus_digest)
            .field(&manifest.backend)
            .field(serde_json::to_vec(cfg).expect("config serializes"))
            .finish();
        manifest.record("evaluate", inputs, outputs, started.elapsed());
        manifest.save(&self.out(MANIFEST_FILE)).map_err(PipelineError::io(&self.out(MANIFEST_FILE)))?;
        Ok(report)
    }
}

type StageRecordOutputs = std::collections::BTreeMap<String, String>;

/// Applies the PPO kernel to every line of a batch file.
pub fn ppo_advantage(input: &Path, output: &Path, cfg: &KernelConfig) -> Result<usize, PipelineError> {
    let samples: Vec<BatchInput> = read_lines(input)?;
    let mut out: Vec<BatchOutput> = Vec::with_capacity(samples.len());
    for s in &samples {
        out.push(
            process_sample(s, cfg)
                .map_err(|e| PipelineError::Validation(format!("sample {}: {e}", s.sample_id)))?,
        );
    }
    write_jsonl(output, &out).map_err(PipelineError::io(output))?;
    Ok(out.len())
}
