//! The agent loop: inner step loop and outer retry loop.
//!
//! One *step* asks the backend for a thought/action pair, routes tool calls
//! through the gateway, and appends the result to the episode's trajectory
//! log. One *episode* runs steps until the model commits to a final answer
//! or the turn budget runs out. A *task* runs up to `max_retries` episodes;
//! each restart begins from a clean slate (the query alone), trading the
//! accumulated context for a fresh line of attack.
//!
//! If every episode ends without an answer, the loop makes one forced
//! answer-only attempt (outside the turn budget) and then falls back to
//! scanning recorded thoughts for an explicit answer claim. A task therefore
//! always yields a `FinalAnswer`, even if it is just the no-answer sentinel.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    render_request, ModelBackend, RenderOptions, SamplingParams,
};
use crate::context::{build_context, Action, ContextPolicy, Step, TrajectoryLog};
use crate::gateway::Gateway;
use crate::verifier::{Decision, LocalVerifier, StepVerdict};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid budgets: max_turns={max_turns}, max_retries={max_retries} (both must be >= 1)")]
    InvalidBudget { max_turns: usize, max_retries: u32 },
}

/// Answer text used when no episode produced anything usable.
pub const NO_ANSWER_SENTINEL: &str =
    "No answer could be determined from the available evidence.";

/// An episode aborts after this many malformed turns in a row; at that point
/// the model is stuck outside the action protocol and a clean restart is
/// worth more than further turns.
pub const MAX_CONSECUTIVE_MALFORMED: u32 = 3;

/// Budgets and policies for one task run.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    /// Max steps per episode.
    pub max_turns: usize,
    /// Max episodes per task.
    pub max_retries: u32,
    pub context_policy: ContextPolicy,
    pub sampling: SamplingParams,
}

impl EpisodeConfig {
    pub fn new(
        max_turns: usize,
        max_retries: u32,
        context_policy: ContextPolicy,
    ) -> Result<Self, AgentError> {
        if max_turns == 0 || max_retries == 0 {
            return Err(AgentError::InvalidBudget {
                max_turns,
                max_retries,
            });
        }
        Ok(EpisodeConfig {
            max_turns,
            max_retries,
            context_policy,
            sampling: SamplingParams::default(),
        })
    }
}

impl Default for EpisodeConfig {
    /// Production budgets: 200 turns per episode, 5 episodes.
    fn default() -> Self {
        EpisodeConfig {
            max_turns: 200,
            max_retries: 5,
            context_policy: ContextPolicy::default(),
            sampling: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Answered,
    TurnBudgetExhausted,
    /// The model fell off the action protocol (repeated malformed turns) or
    /// the backend died; the episode cannot continue.
    FormatError,
}

/// A local-verifier ruling attached to the step it reviewed.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictEvent {
    pub step_index: usize,
    pub verdict: StepVerdict,
}

/// Mutable state of one episode.
#[derive(Debug)]
pub struct RunState {
    pub query: String,
    pub episode: u32,
    pub log: TrajectoryLog,
    pub status: RunStatus,
    pub answer: Option<String>,
    pub verdicts: Vec<VerdictEvent>,
    consecutive_malformed: u32,
    tool_calls_seen: usize,
}

impl RunState {
    pub fn new(query: impl Into<String>, episode: u32) -> Self {
        let query = query.into();
        RunState {
            log: TrajectoryLog::new(episode, query.clone()),
            query,
            episode,
            status: RunStatus::InProgress,
            answer: None,
            verdicts: Vec::new(),
            consecutive_malformed: 0,
            tool_calls_seen: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    /// The model committed to an answer (normally or on the forced attempt).
    ModelFinal,
    /// Recovered from recorded thoughts, or the no-answer sentinel.
    FallbackExtracted,
}

/// The guaranteed product of a task run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub text: String,
    pub source: AnswerSource,
    /// Episode the answer came from (1-based).
    pub episode: u32,
    /// Steps consumed across *all* episodes of the task.
    pub total_steps: usize,
}

/// A finished task: the answer plus every episode's full state.
#[derive(Debug)]
pub struct TaskRun {
    pub answer: FinalAnswer,
    pub episodes: Vec<RunState>,
}

/// Orchestrates backend, gateway, and optional step-level verification.
pub struct AgentLoop<'a> {
    pub config: EpisodeConfig,
    backend: &'a dyn ModelBackend,
    gateway: &'a Gateway,
    verifier: Option<&'a LocalVerifier<'a>>,
}

impl<'a> AgentLoop<'a> {
    pub fn new(config: EpisodeConfig, backend: &'a dyn ModelBackend, gateway: &'a Gateway) -> Self {
        AgentLoop {
            config,
            backend,
            gateway,
            verifier: None,
        }
    }

    /// Enables step-level review of proposed tool calls.
    pub fn with_local_verifier(mut self, verifier: &'a LocalVerifier<'a>) -> Self {
        self.verifier = Some(verifier);
        self
    }

    /// Runs one step: request, parse, (optionally) verify, dispatch, append.
    /// Every outcome — including malformed output — consumes exactly one
    /// step; backend failures end the episode instead.
    pub fn run_step(&self, state: &mut RunState) {
        debug_assert!(matches!(state.status, RunStatus::InProgress));
        let t = state.log.next_index();
        let ctx = build_context(&state.log, &self.config.context_policy, t)
            .expect("t is next_index by construction");
        let opts = RenderOptions {
            format_reminder: state.consecutive_malformed > 0,
            answer_now: false,
        };
        let request = render_request(
            &ctx,
            self.gateway.tool_catalog(),
            self.config.sampling.clone(),
            self.config.context_policy.tokenizer,
            opts,
        );
        let response = match self.backend.complete(&request) {
            Ok(r) => r,
            Err(err) => {
                tracing::warn!(%err, episode = state.episode, step = t, "backend failed; ending episode");
                state.status = RunStatus::FormatError;
                return;
            }
        };

        match response.action {
            Action::FinalAnswer { text } => {
                state
                    .log
                    .append_step(Step {
                        index: t,
                        thought: response.thought,
                        action: Action::FinalAnswer { text: text.clone() },
                        observation: None,
                    })
                    .expect("contiguous index");
                state.answer = Some(text);
                state.status = RunStatus::Answered;
                state.consecutive_malformed = 0;
            }
            Action::ToolCall(proposed) => {
                state.consecutive_malformed = 0;
                state.tool_calls_seen += 1;
                let mut thought = response.thought;
                let mut call = proposed;
                if let Some(verifier) = self.verifier {
                    if state.tool_calls_seen % verifier.cadence() == 0 {
                        let verdict = verifier.review(&ctx, &thought, &call);
                        if verdict.decision == Decision::Revise {
                            if let Some(alt) = verdict.alternatives.first() {
                                tracing::debug!(step = t, from = %call.tool_name, to = %alt.tool_name, "verifier revised the call");
                                call = alt.clone();
                            }
                            if !verdict.critique.is_empty() {
                                thought.push_str("\n[verifier] ");
                                thought.push_str(&verdict.critique);
                            }
                        }
                        state.verdicts.push(VerdictEvent {
                            step_index: t,
                            verdict,
                        });
                    }
                }
                let outcome = self.gateway.dispatch(&call);
                state
                    .log
                    .append_step(Step {
                        index: t,
                        thought,
                        action: Action::ToolCall(outcome.call),
                        observation: Some(outcome.result.output),
                    })
                    .expect("contiguous index");
            }
            Action::Malformed { raw } => {
                state.consecutive_malformed += 1;
                state
                    .log
                    .append_step(Step {
                        index: t,
                        thought: response.thought,
                        action: Action::Malformed { raw },
                        observation: None,
                    })
                    .expect("contiguous index");
                if state.consecutive_malformed >= MAX_CONSECUTIVE_MALFORMED {
                    tracing::warn!(
                        episode = state.episode,
                        step = t,
                        "model stuck outside the action protocol"
                    );
                    state.status = RunStatus::FormatError;
                }
            }
        }

        if matches!(state.status, RunStatus::InProgress)
            && state.log.steps.len() >= self.config.max_turns
        {
            state.status = RunStatus::TurnBudgetExhausted;
        }
    }

    /// Runs one episode from a clean slate until it answers or a budget
    /// trips.
    pub fn run_episode(&self, query: &str, episode: u32) -> RunState {
        let mut state = RunState::new(query, episode);
        while matches!(state.status, RunStatus::InProgress) {
            self.run_step(&mut state);
        }
        state
    }

    /// Runs the full retry loop. See the module docs for the answer ladder:
    /// model answer, forced attempt, thought extraction, sentinel.
    pub fn run_task_full(&self, query: &str) -> TaskRun {
        assert!(
            !query.trim().is_empty(),
            "run_task requires a non-empty query"
        );
        let mut episodes: Vec<RunState> = Vec::new();
        for episode in 1..=self.config.max_retries {
            let state = self.run_episode(query, episode);
            let answered = matches!(state.status, RunStatus::Answered);
            tracing::info!(episode, status = ?state.status, steps = state.log.steps.len(), "episode finished");
            episodes.push(state);
            if answered {
                let last = episodes.last().expect("just pushed");
                let answer = FinalAnswer {
                    text: last.answer.clone().expect("answered state has text"),
                    source: AnswerSource::ModelFinal,
                    episode: last.episode,
                    total_steps: total_steps(&episodes),
                };
                return TaskRun { answer, episodes };
            }
        }

        // Out of retries: one answer-only attempt against the last episode's
        // context. It consumes no step — the budgets are already spent.
        if let Some(text) = self.forced_answer(episodes.last().expect("max_retries >= 1")) {
            let last = episodes.last().expect("non-empty");
            let answer = FinalAnswer {
                text,
                source: AnswerSource::ModelFinal,
                episode: last.episode,
                total_steps: total_steps(&episodes),
            };
            return TaskRun { answer, episodes };
        }

        for state in episodes.iter().rev() {
            if let Some(text) = extract_fallback_answer(&state.log) {
                let answer = FinalAnswer {
                    text,
                    source: AnswerSource::FallbackExtracted,
                    episode: state.episode,
                    total_steps: total_steps(&episodes),
                };
                return TaskRun { answer, episodes };
            }
        }

        let answer = FinalAnswer {
            text: NO_ANSWER_SENTINEL.to_string(),
            source: AnswerSource::FallbackExtracted,
            episode: episodes.last().map(|s| s.episode).unwrap_or(1),
            total_steps: total_steps(&episodes),
        };
        TaskRun { answer, episodes }
    }

    /// Convenience wrapper returning just the answer.
    pub fn run_task(&self, query: &str) -> FinalAnswer {
        self.run_task_full(query).answer
    }

    fn forced_answer(&self, state: &RunState) -> Option<String> {
        let ctx = build_context(
            &state.log,
            &self.config.context_policy,
            state.log.next_index(),
        )
        .expect("next_index is always valid");
        let request = render_request(
            &ctx,
            self.gateway.tool_catalog(),
            self.config.sampling.clone(),
            self.config.context_policy.tokenizer,
            RenderOptions {
                format_reminder: false,
                answer_now: true,
            },
        );
        match self.backend.complete(&request) {
            Ok(response) => match response.action {
                Action::FinalAnswer { text } => Some(text),
                other => {
                    tracing::debug!(?other, "forced attempt did not yield an answer");
                    None
                }
            },
            Err(err) => {
                tracing::debug!(%err, "forced attempt failed");
                None
            }
        }
    }
}

fn total_steps(episodes: &[RunState]) -> usize {
    episodes.iter().map(|s| s.log.steps.len()).sum()
}

static CLAIM_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)answer appears to be").expect("static regex compiles")
});
static ANSWER_CLAIM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)answer appears to be[:\s]+(.+)").expect("static regex compiles")
});

/// Scans a log's thoughts (newest step first) for an explicit answer claim
/// of the form "... answer appears to be X". Returns the last claim within
/// the newest step that contains one, stripped of trailing punctuation.
pub fn extract_fallback_answer(log: &TrajectoryLog) -> Option<String> {
    for step in log.steps.iter().rev() {
        // The capture is greedy, so anchor on the last occurrence of the
        // phrase before capturing; otherwise an early claim swallows later,
        // more considered ones.
        let last_claim = CLAIM_PHRASE
            .find_iter(&step.thought)
            .last()
            .and_then(|m| ANSWER_CLAIM.captures(&step.thought[m.start()..]));
        if let Some(caps) = last_claim {
            let candidate = caps
                .get(1)
                .expect("group 1 always present")
                .as_str()
                .trim()
                .trim_end_matches(['.', '!', '?', ',', ';'])
                .trim_matches(['"', '\''])
                .trim();
            if !candidate.is_empty() {
                return Some(candidate.to_string());
            }
        }
    }
    None
}
