use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selfdebug_core::corpus::{load_corpus, save_corpus, CorpusFormat};
use selfdebug_core::eval::{render_report, EvalMode, EvalReport, ReportFormat};
use selfdebug_core::pipeline::{ppo_advantage, Pipeline, PipelineError, RunConfig};
use selfdebug_core::util::write_atomic;

#[derive(Parser)]
#[command(name = "selfdebug", version, about = "Execution-verified self-debugging data and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample solutions, execute them and collect refinement trajectories.
    Collect {
        #[command(flatten)]
        run: RunArgs,
        /// Rerun even if the manifest says outputs are current.
        #[arg(long)]
        force: bool,
    },
    /// Build sft.jsonl from collected trajectories.
    BuildSft {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        force: bool,
    },
    /// Score refinements in an RL pool.
    Score {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to rl_pool.jsonl in the output directory.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Compute rewards, advantages and losses for a JSONL batch.
    PpoAdvantage {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Kernel settings are read from the `ppo` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        kl_coeff: Option<f64>,
    },
    /// Run pass@k and multi-round refinement evaluation.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        rounds: Option<usize>,
        /// refine, explain-then-refine or both.
        #[arg(long)]
        mode: Option<EvalMode>,
        /// Initial samples per task.
        #[arg(long)]
        samples: Option<usize>,
        /// pass@k cutoffs, e.g. `1,10`.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Render eval.json files as one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert an MBPP or APPS dump into the canonical JSONL corpus.
    ImportCorpus {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: CorpusFormat,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Settings shared by the stages that read a run configuration. Flags
/// override the config file; without `--config` the flags must name a
/// corpus, a backend, a model and an executor.
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; `${VAR}` in strings reads the environment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// canonical-jsonl, mbpp-jsonl or apps-dir.
    #[arg(long)]
    corpus_format: Option<String>,
    /// OpenAI-compatible base URL; the key is read from LLM_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Execution shim command, split on whitespace.
    #[arg(long)]
    shim: Option<String>,
    /// Drop problems whose reference solutions fail their tests.
    #[arg(long)]
    exclude_invalid: bool,
}

fn absolute(p: &std::path::Path) -> String {
    let p = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    };
    p.display().to_string()
}

impl RunArgs {
    fn pipeline(self) -> Result<Pipeline, PipelineError> {
        let (mut raw, base) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
                    path: path.clone(),
                    source,
                })?;
                let v: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Validation(format!("config is not valid JSON: {e}")))?;
                let base = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
                (v, base)
            }
            None => (serde_json::json!({}), PathBuf::from(".")),
        };
        let obj = raw
            .as_object_mut()
            .ok_or_else(|| PipelineError::Validation("config must be a JSON object".into()))?;
        if let Some(c) = &self.corpus {
            let entry = obj.entry("corpus").or_insert_with(|| serde_json::json!({}));
            entry["path"] = absolute(c).into();
        }
        if let Some(f) = &self.corpus_format {
            let entry = obj.entry("corpus").or_insert_with(|| serde_json::json!({}));
            entry["format"] = f.clone().into();
        }
        if self.exclude_invalid {
            let entry = obj.entry("corpus").or_insert_with(|| serde_json::json!({}));
            entry["exclude_invalid"] = true.into();
        }
        if let Some(e) = &self.endpoint {
            obj.insert("backend".into(), serde_json::json!({"kind": "http", "endpoint": e}));
        }
        if let Some(m) = &self.model {
            obj.insert("model".into(), m.clone().into());
        }
        if let Some(cmd) = &self.shim {
            let argv: Vec<&str> = cmd.split_whitespace().collect();
            obj.insert("executor".into(), serde_json::json!({"kind": "shim", "command": argv}));
        }
        let config = RunConfig::from_json(&raw.to_string(), &base)?;
        Pipeline::new(config, self.out)
    }
}

fn emit(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

async fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Collect { run, force } => {
            let summary = run.pipeline()?.collect(force).await?;
            emit(&summary);
        }
        Command::BuildSft { run, force } => {
            let n = run.pipeline()?.build_sft(force)?;
            emit(&serde_json::json!({ "records": n }));
        }
        Command::Score { run, pool } => {
            let records = run.pipeline()?.score(pool.as_deref()).await?;
            let scored = records.iter().filter(|r| r.r_code.is_some()).count();
            emit(&serde_json::json!({ "records": records.len(), "scored": scored }));
        }
        Command::PpoAdvantage {
            input,
            output,
            config,
            gamma,
            kl_coeff,
        } => {
            let mut kernel = match config {
                Some(c) => RunConfig::load(&c)?.ppo,
                None => Default::default(),
            };
            if let Some(g) = gamma {
                kernel.gamma = g;
            }
            if let Some(k) = kl_coeff {
                kernel.assembly.kl_coeff = k;
            }
            let n = ppo_advantage(&input, &output, &kernel)?;
            emit(&serde_json::json!({ "samples": n }));
        }
        Command::Evaluate {
            run,
            rounds,
            mode,
            samples,
            k,
        } => {
            let pipeline = run.pipeline()?;
            let mut cfg = pipeline.config.eval.clone();
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(n) = samples {
                cfg.n_initial_samples = n;
            }
            if let Some(k) = k {
                cfg.ks = k;
            }
            cfg.validate()
                .map_err(|e| PipelineError::Validation(e.to_string()))?;
            let report = pipeline.evaluate(&cfg).await?;
            print!("{}", render_report(&report, ReportFormat::Markdown));
        }
        Command::Report {
            inputs,
            format,
            output,
        } => {
            let mut merged: Option<EvalReport> = None;
            for path in &inputs {
                let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
                    path: path.clone(),
                    source,
                })?;
                let r: EvalReport = serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
                match &mut merged {
                    None => merged = Some(r),
                    Some(m) => {
                        if m.ks != r.ks {
                            return Err(PipelineError::Validation(format!(
                                "{}: ks {:?} differ from {:?}",
                                path.display(),
                                r.ks,
                                m.ks
                            )));
                        }
                        m.per_benchmark.extend(r.per_benchmark);
                    }
                }
            }
            let text = render_report(&merged.expect("clap requires one input"), format);
            match output {
                Some(p) => write_atomic(&p, text.as_bytes())
                    .map_err(|source| PipelineError::Io { path: p, source })?,
                None => print!("{text}"),
            }
        }
        Command::ImportCorpus {
            input,
            format,
            output,
        } => {
            let set = load_corpus(&input, format)?;
            save_corpus(&set, &output)?;
            emit(&serde_json::json!({ "problems": set.len() }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let outcome = rt.block_on(async {
        tokio::select! {
            r = run(cli.command) => Some(r),
            _ = tokio::signal::ctrl_c() => None,
        }
    });
    // Dropping the runtime drops in-flight requests and kills runner processes.
    rt.shutdown_timeout(std::time::Duration::from_secs(2));
    let Some(outcome) = outcome else {
        eprintln!("interrupted; completed stages are recorded in manifest.json");
        return ExitCode::from(130);
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
