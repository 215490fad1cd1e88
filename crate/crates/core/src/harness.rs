//! Benchmark harness: runs task suites, judges answers, aggregates metrics.
//!
//! The headline metric is avg@k: every task is attempted `k` times, each
//! task's accuracy is macro-averaged across the suite, and the result is a
//! percentage. Metrics serialization is deliberately free of timestamps and
//! latencies so the same runs always produce byte-identical files.

use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::TaskRun;
use crate::backend::{ChatRequest, ModelBackend, SamplingParams};
use crate::context::{Action, TokenCounter};

const JUDGE_TEMPLATE: &str = include_str!("../templates/judge_v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("benchmark config: {0}")]
    BadConfig(String),
    #[error("missing outcome for task '{task}' trial {trial}")]
    MissingOutcome { task: String, trial: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One benchmark task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub question: String,
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Exact,
    Normalized,
    Model,
}

/// A benchmark suite definition, loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub name: String,
    /// Attempts per task (the `k` in avg@k).
    pub trials: u32,
    pub judge: JudgeKind,
    pub tasks: Vec<TaskSpec>,
    /// Optional per-episode turn override for this suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<usize>,
}

impl BenchmarkConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let config: BenchmarkConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::BadConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::BadConfig("trials must be >= 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(HarnessError::BadConfig("no tasks defined".into()));
        }
        let mut ids: Vec<&str> = self.tasks.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.tasks.len() {
            return Err(HarnessError::BadConfig("task ids must be unique".into()));
        }
        Ok(())
    }
}

/// Grades one answer. Implementations must be shareable across workers.
pub trait AnswerJudge: Send + Sync {
    /// Returns whether the answer matches plus a short rationale.
    fn judge(&self, question: &str, reference: &str, answer: &str) -> (bool, String);
}

/// A graded trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub task_id: String,
    pub trial: u32,
    pub matched: bool,
    pub rationale: String,
}

/// Applies a judge with the boring preconditions handled: any empty input is
/// an automatic non-match with an explanatory rationale.
pub fn judge_answer(
    judge: &dyn AnswerJudge,
    task_id: &str,
    trial: u32,
    question: &str,
    reference: &str,
    answer: &str,
) -> JudgeVerdict {
    let (matched, rationale) = if question.trim().is_empty()
        || reference.trim().is_empty()
        || answer.trim().is_empty()
    {
        (false, "empty question, reference, or answer".to_string())
    } else {
        judge.judge(question, reference, answer)
    };
    JudgeVerdict {
        task_id: task_id.to_string(),
        trial,
        matched,
        rationale,
    }
}

/// Byte-for-byte comparison.
pub struct ExactJudge;

impl AnswerJudge for ExactJudge {
    fn judge(&self, _question: &str, reference: &str, answer: &str) -> (bool, String) {
        if answer == reference {
            (true, "exact match".into())
        } else {
            (false, "answers differ".into())
        }
    }
}

/// Case-, punctuation-, and whitespace-insensitive comparison.
pub struct NormalizedJudge;

/// Lowercases, maps punctuation to spaces, and collapses whitespace runs.
pub fn normalize_answer(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        let ch = if ch.is_alphanumeric() {
            ch.to_lowercase().next().unwrap_or(ch)
        } else {
            ' '
        };
        if ch == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    out.trim_end().to_string()
}

impl AnswerJudge for NormalizedJudge {
    fn judge(&self, _question: &str, reference: &str, answer: &str) -> (bool, String) {
        if normalize_answer(answer) == normalize_answer(reference) {
            (true, "normalized match".into())
        } else {
            (false, "normalized answers differ".into())
        }
    }
}

/// Model-graded equivalence for answers that legitimately vary in form.
/// Unusable judge output is scored as a non-match, never a crash.
pub struct ModelJudge<'a> {
    backend: &'a dyn ModelBackend,
    sampling: SamplingParams,
}

impl<'a> ModelJudge<'a> {
    pub fn new(backend: &'a dyn ModelBackend) -> Self {
        ModelJudge {
            backend,
            sampling: SamplingParams::default(),
        }
    }
}

impl AnswerJudge for ModelJudge<'_> {
    fn judge(&self, question: &str, reference: &str, answer: &str) -> (bool, String) {
        let rendered = JUDGE_TEMPLATE
            .replace("{question}", question)
            .replace("{reference}", reference)
            .replace("{answer}", answer);
        let request = ChatRequest {
            token_count: TokenCounter::Bytes4.count(&rendered),
            rendered,
            tools: Value::Null,
            sampling: self.sampling.clone(),
        };
        match self.backend.complete(&request) {
            Ok(response) => match response.action {
                Action::FinalAnswer { text } => {
                    let lower = text.trim().to_lowercase();
                    if lower == "correct" || lower.starts_with("correct") {
                        (true, text)
                    } else if lower.starts_with("incorrect") {
                        (false, text)
                    } else {
                        (false, format!("judge verdict unusable: {text}"))
                    }
                }
                other => (false, format!("judge returned no verdict: {other:?}")),
            },
            Err(err) => (false, format!("judge unavailable: {err}")),
        }
    }
}

/// Runs one task attempt end to end. `Err` strings describe infrastructure
/// failures; they are scored as non-matches rather than aborting the suite.
pub trait TrialExecutor: Sync {
    fn run_trial(&self, task: &TaskSpec, trial: u32) -> Result<TaskRun, String>;
}

/// One graded attempt as it appears in the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: u32,
    pub answer: String,
    pub matched: bool,
    pub rationale: String,
    /// Steps consumed across all episodes of the attempt.
    pub steps: usize,
    pub episodes: u32,
    /// False when the executor failed or panicked; such trials are scored
    /// as non-matches and excluded from the step/episode means.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBreakdown {
    pub task_id: String,
    /// Task accuracy as a percentage, one decimal.
    pub score: f64,
    pub trials: Vec<TrialOutcome>,
}

/// Aggregated suite metrics. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub benchmark: String,
    pub trials_per_task: u32,
    /// Macro-averaged avg@k percentage, one decimal.
    pub score: f64,
    /// Mean steps per completed trial.
    pub mean_steps: f64,
    /// Mean episodes per completed trial.
    pub mean_episodes: f64,
    pub tasks: Vec<TaskBreakdown>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Folds per-task trial outcomes into suite metrics. Every task must carry
/// exactly `trials` outcomes numbered `1..=trials`.
pub fn aggregate(
    benchmark: &str,
    trials: u32,
    per_task: Vec<(String, Vec<TrialOutcome>)>,
) -> Result<RunMetrics, HarnessError> {
    let mut tasks = Vec::with_capacity(per_task.len());
    let mut task_fractions = Vec::with_capacity(per_task.len());
    let mut steps_sum = 0.0;
    let mut episodes_sum = 0.0;
    let mut completed = 0usize;
    for (task_id, outcomes) in per_task {
        for expected in 1..=trials {
            if !outcomes.iter().any(|o| o.trial == expected) {
                return Err(HarnessError::MissingOutcome {
                    task: task_id,
                    trial: expected,
                });
            }
        }
        if outcomes.len() != trials as usize {
            return Err(HarnessError::BadConfig(format!(
                "task '{task_id}' has {} outcomes for {trials} trials",
                outcomes.len()
            )));
        }
        let matched = outcomes.iter().filter(|o| o.matched).count();
        let fraction = matched as f64 / trials as f64;
        task_fractions.push(fraction);
        for o in &outcomes {
            if o.completed {
                steps_sum += o.steps as f64;
                episodes_sum += f64::from(o.episodes);
                completed += 1;
            }
        }
        tasks.push(TaskBreakdown {
            task_id,
            score: round1(100.0 * fraction),
            trials: outcomes,
        });
    }
    if tasks.is_empty() {
        return Err(HarnessError::BadConfig("no tasks to aggregate".into()));
    }
    let score = round1(
        100.0 * task_fractions.iter().sum::<f64>() / task_fractions.len() as f64,
    );
    let (mean_steps, mean_episodes) = if completed == 0 {
        (0.0, 0.0)
    } else {
        (steps_sum / completed as f64, episodes_sum / completed as f64)
    };
    Ok(RunMetrics {
        benchmark: benchmark.to_string(),
        trials_per_task: trials,
        score,
        mean_steps,
        mean_episodes,
        tasks,
    })
}

/// Runs the whole suite: `tasks x trials` attempts, fanned out over up to
/// `workers` threads, graded by `judge`, aggregated deterministically.
/// Executor panics and errors are contained to their own trial.
pub fn run_benchmark(
    config: &BenchmarkConfig,
    executor: &dyn TrialExecutor,
    judge: &dyn AnswerJudge,
    workers: usize,
) -> Result<RunMetrics, HarnessError> {
    config.validate()?;
    let jobs: Vec<(usize, u32)> = (0..config.tasks.len())
        .flat_map(|t| (1..=config.trials).map(move |k| (t, k)))
        .collect();
    let slots: Vec<Mutex<Option<TrialOutcome>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);

    let run_one = |job: usize| {
        let (task_idx, trial) = jobs[job];
        let task = &config.tasks[task_idx];
        let result = std::panic::catch_unwind(AssertUnwindSafe(|| {
            executor.run_trial(task, trial)
        }));
        let outcome = match result {
            Ok(Ok(run)) => {
                let verdict = judge_answer(
                    judge,
                    &task.id,
                    trial,
                    &task.question,
                    &task.reference,
                    &run.answer.text,
                );
                TrialOutcome {
                    trial,
                    answer: run.answer.text.clone(),
                    matched: verdict.matched,
                    rationale: verdict.rationale,
                    steps: run.answer.total_steps,
                    episodes: run.episodes.len() as u32,
                    completed: true,
                }
            }
            Ok(Err(detail)) => {
                tracing::warn!(task = %task.id, trial, %detail, "trial failed");
                TrialOutcome {
                    trial,
                    answer: String::new(),
                    matched: false,
                    rationale: format!("trial failed: {detail}"),
                    steps: 0,
                    episodes: 0,
                    completed: false,
                }
            }
            Err(_) => {
                tracing::error!(task = %task.id, trial, "trial panicked");
                TrialOutcome {
                    trial,
                    answer: String::new(),
                    matched: false,
                    rationale: "trial panicked".to_string(),
                    steps: 0,
                    episodes: 0,
                    completed: false,
                }
            }
        };
        *slots[job].lock().expect("slot poisoned") = Some(outcome);
    };

    let workers = workers.max(1).min(jobs.len().max(1));
    if workers <= 1 {
        for job in 0..jobs.len() {
            run_one(job);
        }
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let job = cursor.fetch_add(1, Ordering::SeqCst);
                    if job >= jobs.len() {
                        break;
                    }
                    run_one(job);
                });
            }
        });
    }

    let mut per_task: Vec<(String, Vec<TrialOutcome>)> = config
        .tasks
        .iter()
        .map(|t| (t.id.clone(), Vec::with_capacity(config.trials as usize)))
        .collect();
    for (job, slot) in slots.into_iter().enumerate() {
        let (task_idx, trial) = jobs[job];
        let outcome = slot
            .into_inner()
            .expect("slot poisoned")
            .ok_or(HarnessError::MissingOutcome {
                task: config.tasks[task_idx].id.clone(),
                trial,
            })?;
        per_task[task_idx].1.push(outcome);
    }
    aggregate(&config.name, config.trials, per_task)
}

/// Canonical serialization of a metrics file.
pub fn metrics_json(metrics: &RunMetrics) -> String {
    let mut text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AnswerSource, FinalAnswer, RunState, RunStatus};
    use crate::backend::ScriptedBackend;

    fn fake_run(answer: &str, steps: usize, episodes: u32) -> TaskRun {
        let mut states = Vec::new();
        for e in 1..=episodes {
            let mut state = RunState::new("q", e);
            state.status = RunStatus::TurnBudgetExhausted;
            states.push(state);
        }
        TaskRun {
            answer: FinalAnswer {
                text: answer.to_string(),
                source: AnswerSource::ModelFinal,
                episode: episodes,
                total_steps: steps,
            },
            episodes: states,
        }
    }

    /// Deterministic executor: answers correctly when the trial number is in
    /// the task's allow set; panics or errors on demand.
    struct TableExecutor;

    impl TrialExecutor for TableExecutor {
        fn run_trial(&self, task: &TaskSpec, trial: u32) -> Result<TaskRun, String> {
            match task.id.as_str() {
                "always" => Ok(fake_run(&task.reference, 4, 1)),
                "flaky" => {
                    if trial == 2 {
                        Ok(fake_run(&task.reference, 6, 2))
                    } else {
                        Ok(fake_run("wrong", 2, 1))
                    }
                }
                "broken" => Err("backend unreachable".into()),
                "panicky" => panic!("boom"),
                other => panic!("unknown task {other}"),
            }
        }
    }

    fn config(ids: &[&str], trials: u32) -> BenchmarkConfig {
        BenchmarkConfig {
            name: "demo".into(),
            trials,
            judge: JudgeKind::Normalized,
            tasks: ids
                .iter()
                .map(|id| TaskSpec {
                    id: id.to_string(),
                    question: format!("question for {id}"),
                    reference: "Paris".into(),
                })
                .collect(),
            max_turns: None,
        }
    }

    #[test]
    fn normalized_judge_ignores_case_and_punctuation() {
        let j = NormalizedJudge;
        assert!(j.judge("q", "Paris", "paris.").0);
        assert!(j.judge("q", "New York City", " new   york, city! ").0);
        assert!(!j.judge("q", "Paris", "Lyon").0);
        assert_eq!(normalize_answer("  A-B.c  "), "a b c");
    }

    #[test]
    fn exact_judge_is_strict() {
        let j = ExactJudge;
        assert!(j.judge("q", "Paris", "Paris").0);
        assert!(!j.judge("q", "Paris", "paris").0);
    }

    #[test]
    fn empty_inputs_never_match() {
        let verdict = judge_answer(&ExactJudge, "t", 1, "q", "Paris", "   ");
        assert!(!verdict.matched);
        assert!(verdict.rationale.contains("empty"));
        let verdict = judge_answer(&ExactJudge, "t", 1, "", "Paris", "Paris");
        assert!(!verdict.matched);
    }

    #[test]
    fn model_judge_parses_verdicts_and_contains_garbage() {
        let backend = ScriptedBackend::new([
            "<final_answer>correct</final_answer>",
            "<final_answer>incorrect: names a different city</final_answer>",
            "<final_answer>maybe?</final_answer>",
            "no protocol at all",
        ]);
        let judge = ModelJudge::new(&backend);
        assert!(judge.judge("q", "Paris", "paris, france").0);
        let (m, why) = judge.judge("q", "Paris", "Lyon");
        assert!(!m);
        assert!(why.contains("different city"));
        assert!(!judge.judge("q", "Paris", "Paris").0);
        assert!(!judge.judge("q", "Paris", "Paris").0);
    }

    #[test]
    fn benchmark_macro_averages_and_counts_steps() {
        let config = config(&["always", "flaky"], 3);
        let metrics = run_benchmark(&config, &TableExecutor, &NormalizedJudge, 1).unwrap();
        // Task accuracies: 3/3 and 1/3 -> (100.0 + 33.333) / 2 = 66.7.
        assert_eq!(metrics.score, 66.7);
        assert_eq!(metrics.tasks[0].score, 100.0);
        assert_eq!(metrics.tasks[1].score, 33.3);
        // Steps: three trials at 4, two at 2, one at 6 -> 22/6.
        assert!((metrics.mean_steps - 22.0 / 6.0).abs() < 1e-12);
        assert_eq!(metrics.trials_per_task, 3);
        assert_eq!(metrics.tasks[0].trials.len(), 3);
    }

    #[test]
    fn failures_and_panics_score_zero_without_aborting() {
        let config = config(&["always", "broken", "panicky"], 2);
        let metrics = run_benchmark(&config, &TableExecutor, &NormalizedJudge, 1).unwrap();
        assert_eq!(metrics.score, 33.3); // only "always" scores
        let broken = &metrics.tasks[1];
        assert!(broken.trials.iter().all(|t| !t.matched && !t.completed));
        assert!(broken.trials[0].rationale.contains("backend unreachable"));
        assert!(metrics.tasks[2].trials[0].rationale.contains("panicked"));
        // Incomplete trials do not drag the step mean down.
        assert_eq!(metrics.mean_steps, 4.0);
    }

    #[test]
    fn parallel_and_serial_runs_agree_byte_for_byte() {
        let config = config(&["always", "flaky"], 3);
        let serial = run_benchmark(&config, &TableExecutor, &NormalizedJudge, 1).unwrap();
        let parallel = run_benchmark(&config, &TableExecutor, &NormalizedJudge, 4).unwrap();
        assert_eq!(metrics_json(&serial), metrics_json(&parallel));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let config = config(&["always", "flaky"], 3);
        let a = run_benchmark(&config, &TableExecutor, &NormalizedJudge, 2).unwrap();
        let b = run_benchmark(&config, &TableExecutor, &NormalizedJudge, 3).unwrap();
        assert_eq!(metrics_json(&a), metrics_json(&b));
        assert!(!metrics_json(&a).contains("latency"));
        assert!(!metrics_json(&a).contains("time"));
    }

    #[test]
    fn suite_score_ignores_task_order() {
        let forward = run_benchmark(
            &config(&["always", "flaky"], 3),
            &TableExecutor,
            &NormalizedJudge,
            1,
        )
        .unwrap();
        let backward = run_benchmark(
            &config(&["flaky", "always"], 3),
            &TableExecutor,
            &NormalizedJudge,
            1,
        )
        .unwrap();
        assert_eq!(forward.score, backward.score);
        assert_ne!(
            forward.tasks[0].task_id,
            backward.tasks[0].task_id,
            "breakdown preserves input order"
        );
    }

    #[test]
    fn aggregate_rejects_missing_trials() {
        let outcome = TrialOutcome {
            trial: 1,
            answer: "x".into(),
            matched: true,
            rationale: "".into(),
            steps: 1,
            episodes: 1,
            completed: true,
        };
        let err = aggregate("b", 2, vec![("t".into(), vec![outcome])]).unwrap_err();
        assert!(matches!(
            err,
            HarnessError::MissingOutcome { trial: 2, .. }
        ));
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let mut c = config(&["a", "a"], 3);
        assert!(c.validate().is_err());
        c = config(&["a"], 0);
        assert!(c.validate().is_err());
        c = config(&[], 3);
        assert!(c.validate().is_err());
    }
}
