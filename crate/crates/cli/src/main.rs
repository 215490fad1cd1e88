//! `deepresearch`: command-line front end for the agent stack.
//!
//! Three subcommands:
//! - `run` executes one query through the dual-loop agent, printing the
//!   final answer as a JSON line and optionally writing the trajectory.
//! - `bench` runs a benchmark suite and writes the aggregated metrics.
//! - `objective` evaluates training objectives over an offline fixture.
//!
//! Runs are offline-first: `--script` replays recorded model responses and
//! `--corpus` serves search results locally. Live runs use the `[endpoints]`
//! config section (or `MODEL_ENDPOINT` etc. in the environment).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use deepresearch_core::agent::{AgentLoop, EpisodeConfig, TaskRun};
use deepresearch_core::backend::{
    HttpBackend, HttpBackendConfig, ModelBackend, ScriptedBackend,
};
use deepresearch_core::config::RunConfig;
use deepresearch_core::gateway::{
    Blocklist, Gateway, HttpFetcher, HttpSearch, LocalSandboxProvider, MockFetcher,
    MockSearchIndex, ModelSummarizer, PassthroughSummarizer, SearchProvider, Summarizer,
    UrlFetcher,
};
use deepresearch_core::harness::{
    metrics_json, run_benchmark, AnswerJudge, BenchmarkConfig, ExactJudge, JudgeKind, ModelJudge,
    NormalizedJudge, TaskSpec, TrialExecutor,
};
use deepresearch_core::trace;
use deepresearch_core::training::{
    evaluate_fixture_line, load_fixture, ObjectiveOp, ObjectiveParams,
};
use deepresearch_core::verifier::{
    global_verify, AgentCandidateRunner, Candidate, ChainAuditor, LocalVerifier,
    ModelChainAuditor,
};

#[derive(Parser)]
#[command(
    name = "deepresearch",
    version,
    about = "Deep-research agent: single runs, benchmark suites, objective evaluation"
)]
struct Cli {
    /// Diagnostic log level on stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single research query through the agent loop.
    Run(RunArgs),
    /// Run a benchmark suite and aggregate avg@k metrics.
    Bench(BenchArgs),
    /// Evaluate training objectives over a JSON Lines fixture.
    Objective(ObjectiveArgs),
}

#[derive(Args)]
struct RunArgs {
    /// The research question.
    #[arg(long)]
    query: String,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scripted model responses: JSON Lines, one {"raw": "..."} per line.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Offline search corpus: JSON array of {title, url, snippet}.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Domain blocklist file (one domain per line), overriding the config.
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// Write the trajectory (JSON Lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enable a verification stage; repeatable (`--verify local --verify global`).
    #[arg(long = "verify", value_enum)]
    verify: Vec<VerifyMode>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VerifyMode {
    /// Audit each proposed tool call before dispatch.
    Local,
    /// Score the finished answer's evidence chain and resample under budget.
    Global,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark definition (JSON: name, trials, judge, tasks).
    #[arg(long)]
    config: PathBuf,
    /// Run configuration (TOML) shared by every trial.
    #[arg(long)]
    run_config: Option<PathBuf>,
    /// Directory of scripted responses: <task>-<trial>.jsonl, falling back
    /// to <task>.jsonl (a fresh queue is loaded per trial either way).
    #[arg(long)]
    script_dir: Option<PathBuf>,
    /// Offline search corpus shared by every trial.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Domain blocklist file, overriding the run config.
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// Write metrics JSON here (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-trial trajectories into this directory.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Worker thread cap, overriding the run config.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ObjectiveArgs {
    /// Objective fixture: JSON Lines, one evaluation case per line.
    #[arg(long)]
    fixture: PathBuf,
    /// One of: nll, dpo, po, reward, advantages, grpo.
    #[arg(long)]
    op: String,
    /// Preference temperature (dpo, po, grpo KL terms).
    #[arg(long)]
    beta: Option<f64>,
    /// Chosen-side NLL anchor weight (po).
    #[arg(long)]
    lambda: Option<f64>,
    /// Reward for a correct outcome.
    #[arg(long)]
    alpha_correct: Option<f64>,
    /// Penalty for a format violation.
    #[arg(long)]
    alpha_format: Option<f64>,
    /// Baseline KL coefficient (grpo).
    #[arg(long)]
    beta_base: Option<f64>,
    /// Extra KL for low-confidence tokens on negative advantages (grpo).
    #[arg(long)]
    beta_entropy: Option<f64>,
    /// Log-prob threshold for the low-confidence gate (grpo).
    #[arg(long)]
    tau: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    let level = tracing_subscriber::filter::LevelFilter::from_str(&cli.log)
        .unwrap_or(tracing_subscriber::filter::LevelFilter::WARN);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Objective(args) => cmd_objective(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// Loads the run config, or defaults when no file was given.
fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

/// Picks the model backend: scripted replay when a script is given,
/// otherwise the configured (or environment-specified) live endpoint.
fn build_backend(script: Option<&Path>, config: &RunConfig) -> Result<Arc<dyn ModelBackend>> {
    if let Some(path) = script {
        let backend = ScriptedBackend::load(path)
            .with_context(|| format!("loading script {}", path.display()))?;
        return Ok(Arc::new(backend));
    }
    if let Some(endpoint) = &config.endpoints.model {
        let model = config
            .endpoints
            .model_name
            .clone()
            .unwrap_or_else(|| "default".into());
        let mut http = HttpBackendConfig::new(endpoint.clone(), model);
        http.api_key = std::env::var("MODEL_API_KEY").ok();
        return Ok(Arc::new(HttpBackend::new(http)));
    }
    match HttpBackend::from_env() {
        Ok(backend) => Ok(Arc::new(backend)),
        Err(_) => bail!(
            "no model backend: pass --script, set [endpoints].model in the config, \
             or export MODEL_ENDPOINT"
        ),
    }
}

/// Assembles the tool gateway. Offline runs (corpus given or no endpoints)
/// get the in-memory search index, a corpus-backed page fetcher, and the
/// keyword summarizer; live runs get HTTP adapters and the model summarizer.
fn build_gateway(
    config: &RunConfig,
    corpus: Option<&Path>,
    blocklist_override: Option<&Path>,
    live_backend: Option<Arc<dyn ModelBackend>>,
) -> Result<Gateway> {
    let blocklist = match blocklist_override.or(config.tools.blocklist.as_deref()) {
        Some(path) => {
            Blocklist::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => Blocklist::new(),
    };

    let search: Box<dyn SearchProvider>;
    let fetchers: Vec<Box<dyn UrlFetcher>>;
    let summarizer: Box<dyn Summarizer>;
    if let Some(path) = corpus {
        let index = MockSearchIndex::load(path)
            .with_context(|| format!("loading corpus {}", path.display()))?;
        // Serve the corpus documents as pages too, so scripted runs can
        // scrape what they search.
        let pages: BTreeMap<String, Vec<u8>> = load_corpus_pages(path)?;
        search = Box::new(index);
        fetchers = vec![Box::new(MockFetcher::new("corpus", pages))];
        summarizer = Box::new(PassthroughSummarizer);
    } else if let Some(endpoint) = &config.endpoints.search {
        search = Box::new(HttpSearch::new(endpoint.clone()));
        fetchers = vec![Box::new(HttpFetcher::new("direct"))];
        summarizer = match live_backend {
            Some(backend) => Box::new(ModelSummarizer::new(backend)),
            None => Box::new(PassthroughSummarizer),
        };
    } else {
        // No search configured at all: searches return nothing, fetches fail.
        search = Box::new(MockSearchIndex::new(Vec::new()));
        fetchers = vec![Box::new(MockFetcher::failing("offline"))];
        summarizer = Box::new(PassthroughSummarizer);
    }

    let sandbox = LocalSandboxProvider {
        timeout: std::time::Duration::from_secs(config.tools.sandbox_timeout_secs),
    };
    Ok(Gateway::new(
        search,
        fetchers,
        summarizer,
        Box::new(sandbox),
        blocklist,
    ))
}

/// Re-reads the corpus as a url -> page-text map for the offline fetcher.
fn load_corpus_pages(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    #[derive(serde::Deserialize)]
    struct Doc {
        title: String,
        url: String,
        snippet: String,
    }
    let text = std::fs::read_to_string(path)?;
    let docs: Vec<Doc> = serde_json::from_str(&text)
        .with_context(|| format!("parsing corpus {}", path.display()))?;
    Ok(docs
        .into_iter()
        .map(|d| (d.url, format!("{}\n{}", d.title, d.snippet).into_bytes()))
        .collect())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    if args.verify.contains(&VerifyMode::Local) {
        config.verify.local = true;
    }
    if args.verify.contains(&VerifyMode::Global) {
        config.verify.global = true;
    }

    let mut episode = config.episode_config()?;
    episode.sampling = config.sampling_params()?;
    let backend = build_backend(args.script.as_deref(), &config)?;
    let live_backend = args.script.is_none().then(|| backend.clone());
    let gateway = build_gateway(
        &config,
        args.corpus.as_deref(),
        args.blocklist.as_deref(),
        live_backend,
    )?;

    // The local verifier audits with the same backend; scripted runs
    // interleave auditor responses in the one response queue.
    let verifier = if config.verify.local {
        Some(LocalVerifier::with_cadence(backend.as_ref(), config.verify.every_n)
            .map_err(|e| anyhow::anyhow!(e.to_string()))?)
    } else {
        None
    };
    let mut agent = AgentLoop::new(episode.clone(), backend.as_ref(), &gateway);
    if let Some(v) = &verifier {
        agent = agent.with_local_verifier(v);
    }

    let run = agent.run_task_full(&args.query);
    let mut trajectory = trace::task_to_jsonl(&run);
    let mut report = serde_json::json!({
        "answer": run.answer.text,
        "source": run.answer.source,
        "episode": run.answer.episode,
        "total_steps": run.answer.total_steps,
        "episodes": run.episodes.len(),
    });

    if config.verify.global {
        let auditor = ModelChainAuditor::new(backend.as_ref());
        let runner = AgentCandidateRunner {
            agent: AgentLoop::new(episode, backend.as_ref(), &gateway),
        };
        let initial = initial_candidate(&run, &args.query);
        let verdict = global_verify(
            &args.query,
            vec![initial],
            &config.global_verify_config()?,
            &runner,
            &auditor,
        );
        report["answer"] = serde_json::json!(verdict.answer.text);
        report["completeness"] = serde_json::json!(verdict.completeness);
        report["candidates_considered"] = serde_json::json!(verdict.candidates_considered);
        let chain = ModelChainAuditor::new(backend.as_ref())
            .audit(&run.episodes[run.answer.episode as usize - 1].log, &verdict.answer.text);
        trajectory.push_str(&trace::chain_to_jsonl(&chain));
    }

    if let Some(out) = &args.out {
        std::fs::write(out, &trajectory).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// The finished run as a verification candidate: its answer plus the log of
/// the episode that produced it.
fn initial_candidate(run: &TaskRun, query: &str) -> Candidate {
    let idx = (run.answer.episode as usize)
        .saturating_sub(1)
        .min(run.episodes.len().saturating_sub(1));
    let log = run
        .episodes
        .get(idx)
        .map(|s| s.log.clone())
        .unwrap_or_else(|| deepresearch_core::context::TrajectoryLog::new(1, query));
    Candidate {
        answer: run.answer.clone(),
        log,
    }
}

/// Per-trial executor shared by scripted and live benchmark runs. Each trial
/// gets a fresh backend (fresh scripted queue) and a fresh gateway.
struct CliExecutor<'a> {
    config: &'a RunConfig,
    episode: EpisodeConfig,
    script_dir: Option<&'a Path>,
    corpus: Option<&'a Path>,
    blocklist: Option<&'a Path>,
    trajectories: Option<&'a Path>,
}

impl CliExecutor<'_> {
    fn script_for(&self, dir: &Path, task: &TaskSpec, trial: u32) -> Result<PathBuf> {
        let per_trial = dir.join(format!("{}-{}.jsonl", task.id, trial));
        if per_trial.exists() {
            return Ok(per_trial);
        }
        let shared = dir.join(format!("{}.jsonl", task.id));
        if shared.exists() {
            return Ok(shared);
        }
        bail!(
            "no script for task '{}' trial {trial}: tried {} and {}",
            task.id,
            per_trial.display(),
            shared.display()
        );
    }
}

impl TrialExecutor for CliExecutor<'_> {
    fn run_trial(&self, task: &TaskSpec, trial: u32) -> Result<TaskRun, String> {
        let attempt = || -> Result<TaskRun> {
            let backend: Arc<dyn ModelBackend> = match self.script_dir {
                Some(dir) => {
                    let path = self.script_for(dir, task, trial)?;
                    Arc::new(ScriptedBackend::load(&path)?)
                }
                None => build_backend(None, self.config)?,
            };
            let live_backend = self.script_dir.is_none().then(|| backend.clone());
            let gateway = build_gateway(self.config, self.corpus, self.blocklist, live_backend)?;
            let agent = AgentLoop::new(self.episode.clone(), backend.as_ref(), &gateway);
            let run = agent.run_task_full(&task.question);
            if let Some(dir) = self.trajectories {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}-{}.jsonl", task.id, trial));
                std::fs::write(&path, trace::task_to_jsonl(&run))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(run)
        };
        attempt().map_err(|e| format!("{e:#}"))
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let bench = BenchmarkConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let run_config = load_run_config(args.run_config.as_deref())?;

    let mut episode = run_config.episode_config()?;
    episode.sampling = run_config.sampling_params()?;
    if let Some(max_turns) = bench.max_turns {
        episode = EpisodeConfig::new(max_turns, episode.max_retries, episode.context_policy.clone())
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        episode.sampling = run_config.sampling_params()?;
    }

    let executor = CliExecutor {
        config: &run_config,
        episode,
        script_dir: args.script_dir.as_deref(),
        corpus: args.corpus.as_deref(),
        blocklist: args.blocklist.as_deref(),
        trajectories: args.trajectories.as_deref(),
    };

    // The model judge needs a live endpoint; deterministic judges do not.
    let judge_backend = match bench.judge {
        JudgeKind::Model => Some(build_backend(None, &run_config).context(
            "the model judge needs a live endpoint; use an exact or normalized judge offline",
        )?),
        _ => None,
    };
    let judge: Box<dyn AnswerJudge + '_> = match bench.judge {
        JudgeKind::Exact => Box::new(ExactJudge),
        JudgeKind::Normalized => Box::new(NormalizedJudge),
        JudgeKind::Model => Box::new(ModelJudge::new(
            judge_backend.as_deref().expect("backend built above"),
        )),
    };

    let workers = args.workers.unwrap_or(run_config.harness.workers);
    let metrics = run_benchmark(&bench, &executor, judge.as_ref(), workers)?;
    let rendered = metrics_json(&metrics);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &rendered)
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("metrics written to {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_objective(args: ObjectiveArgs) -> Result<()> {
    let op = ObjectiveOp::from_str(&args.op).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let mut params = ObjectiveParams::default();
    if let Some(v) = args.beta {
        params.beta = v;
    }
    if let Some(v) = args.lambda {
        params.lambda = v;
    }
    if let Some(v) = args.alpha_correct {
        params.alpha_correct = v;
    }
    if let Some(v) = args.alpha_format {
        params.alpha_format = v;
    }
    if let Some(v) = args.beta_base {
        params.beta_base = v;
    }
    if let Some(v) = args.beta_entropy {
        params.beta_entropy = v;
    }
    if let Some(v) = args.tau {
        params.tau = v;
    }

    let lines = load_fixture(&args.fixture).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    for (i, line) in lines.iter().enumerate() {
        let value = evaluate_fixture_line(line, op, &params)
            .map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?;
        println!("{}", serde_json::to_string(&value)?);
    }
    Ok(())
}
