//! Trajectory log and the bounded context view derived from it.
//!
//! The log is the append-only ground truth of an episode: every step keeps
//! its full thought, action, and (for tool calls) raw observation. The model
//! never conditions on the log directly. [`build_context`] derives the
//! effective view for the next step: thoughts and actions are always kept,
//! observations inside a sliding window of the most recent steps are capped
//! to a token budget, and older observations are masked out entirely. This
//! keeps long tool outputs from flooding the prompt while the reasoning
//! trace stays intact.

use serde::{Deserialize, Serialize};

use crate::gateway::ToolCall;

/// Marker appended to observations cut by the context policy. The system
/// prompt teaches the model to recognize this exact string, so it must never
/// change between releases.
pub const TRUNCATION_MARKER: &str = "[Result truncated]";

/// Placeholder rendered in place of observations that fell out of the
/// sliding window.
pub const MASKED_PLACEHOLDER: &str = "[observation omitted]";

/// What the model did at one step.
///
/// `Malformed` records output that parsed to neither a tool call nor a final
/// answer. Keeping it as a step (rather than silently retrying) makes the
/// turn count against the episode budget and leaves an auditable trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall(ToolCall),
    FinalAnswer { text: String },
    Malformed { raw: String },
}

impl Action {
    /// True for actions produced by a successful parse (tool call or final
    /// answer).
    pub fn is_well_formed(&self) -> bool {
        !matches!(self, Action::Malformed { .. })
    }
}

/// One completed step of an episode.
///
/// `observation` is present exactly when the action was a dispatched tool
/// call; final answers and malformed turns produce no observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position within the episode.
    pub index: usize,
    pub thought: String,
    pub action: Action,
    pub observation: Option<String>,
}

/// Append-only record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    /// 1-based episode number within the task.
    pub episode: u32,
    pub query: String,
    pub steps: Vec<Step>,
}

impl TrajectoryLog {
    pub fn new(episode: u32, query: impl Into<String>) -> Self {
        TrajectoryLog {
            episode,
            query: query.into(),
            steps: Vec::new(),
        }
    }

    /// Appends a step, enforcing contiguous 1-based indices and the
    /// observation/action pairing rule. Existing steps are never touched.
    pub fn append_step(&mut self, step: Step) -> Result<(), ContextError> {
        let expected = self.steps.len() + 1;
        if step.index != expected {
            return Err(ContextError::NonContiguousStep {
                expected,
                got: step.index,
            });
        }
        let wants_observation = matches!(step.action, Action::ToolCall(_));
        if wants_observation != step.observation.is_some() {
            return Err(ContextError::ObservationMismatch { index: step.index });
        }
        self.steps.push(step);
        Ok(())
    }

    /// Index the next step would get (`len + 1`).
    pub fn next_index(&self) -> usize {
        self.steps.len() + 1
    }
}

/// How token counts are metered when capping observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCounter {
    /// Whitespace-separated words. Deterministic and easy to reason about;
    /// the default for tests and fixtures.
    Words,
    /// `ceil(bytes / 4)`, a cheap proxy for BPE token counts in live runs.
    Bytes4,
}

impl TokenCounter {
    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenCounter::Words => text.split_whitespace().count(),
            TokenCounter::Bytes4 => text.len().div_ceil(4),
        }
    }

    /// Byte length of the longest prefix that fits in `limit` tokens without
    /// splitting a word or a UTF-8 character.
    fn prefix_len(&self, text: &str, limit: usize) -> usize {
        match self {
            TokenCounter::Words => {
                let mut words_seen = 0;
                let mut end = 0;
                let mut in_word = false;
                for (i, ch) in text.char_indices() {
                    if ch.is_whitespace() {
                        in_word = false;
                    } else {
                        if !in_word {
                            in_word = true;
                            words_seen += 1;
                            if words_seen > limit {
                                return end;
                            }
                        }
                        end = i + ch.len_utf8();
                    }
                }
                end
            }
            TokenCounter::Bytes4 => {
                let mut cut = limit.saturating_mul(4).min(text.len());
                while !text.is_char_boundary(cut) {
                    cut -= 1;
                }
                cut
            }
        }
    }
}

/// Validated parameters of the context operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPolicy {
    /// Number of most recent steps whose observations stay visible.
    pub window: usize,
    /// Per-observation token cap.
    pub obs_limit: usize,
    pub tokenizer: TokenCounter,
}

impl ContextPolicy {
    pub fn new(
        window: usize,
        obs_limit: usize,
        tokenizer: TokenCounter,
    ) -> Result<Self, ContextError> {
        if window == 0 || obs_limit == 0 {
            return Err(ContextError::InvalidPolicy { window, obs_limit });
        }
        Ok(ContextPolicy {
            window,
            obs_limit,
            tokenizer,
        })
    }
}

impl Default for ContextPolicy {
    /// Five-step window with a generous cap, metered by the byte proxy.
    fn default() -> Self {
        ContextPolicy {
            window: 5,
            obs_limit: 2048,
            tokenizer: TokenCounter::Bytes4,
        }
    }
}

/// An observation as the model will see it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManagedObservation {
    /// Inside the window and under the cap: passed through verbatim.
    Full { text: String },
    /// Inside the window but over the cap: a prefix plus [`TRUNCATION_MARKER`].
    Truncated { text: String },
    /// Outside the window.
    Masked,
    /// The step produced no observation (final answer or malformed turn).
    Absent,
}

impl ManagedObservation {
    /// Text as rendered into a prompt, or `None` when the step had no
    /// observation at all.
    pub fn rendered(&self) -> Option<&str> {
        match self {
            ManagedObservation::Full { text } | ManagedObservation::Truncated { text } => {
                Some(text)
            }
            ManagedObservation::Masked => Some(MASKED_PLACEHOLDER),
            ManagedObservation::Absent => None,
        }
    }
}

/// One step as it appears in the effective context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub index: usize,
    pub thought: String,
    pub action: Action,
    pub observation: ManagedObservation,
}

/// The bounded view handed to the model when proposing step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveContext {
    pub query: String,
    pub entries: Vec<ContextEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("step index {got} does not extend the log (expected {expected})")]
    NonContiguousStep { expected: usize, got: usize },
    #[error("step {index}: tool calls must carry an observation and other actions must not")]
    ObservationMismatch { index: usize },
    #[error("invalid context policy: window={window}, obs_limit={obs_limit} (both must be >= 1)")]
    InvalidPolicy { window: usize, obs_limit: usize },
    #[error("context requested for step {t} but the log holds {steps} steps (expected t = steps + 1)")]
    StepPointerMismatch { t: usize, steps: usize },
}

/// Step indices whose observations stay visible when proposing step `t`:
/// the `window` most recent completed steps, i.e. `max(1, t - window) ..= t - 1`.
/// Empty at the first step.
pub fn window_indices(t: usize, window: usize) -> std::ops::RangeInclusive<usize> {
    let start = t.saturating_sub(window).max(1);
    start..=t.saturating_sub(1)
}

/// Caps one observation to the policy's token budget.
///
/// Over-limit text is cut to the longest fitting prefix (never splitting a
/// word or UTF-8 character) and suffixed with [`TRUNCATION_MARKER`].
/// Re-applying the operator to its own output is a no-op: an input that ends
/// with the marker and fits once the marker is ignored is returned unchanged.
pub fn truncate_observation(obs: &str, policy: &ContextPolicy) -> ManagedObservation {
    let counter = policy.tokenizer;
    if counter.count(obs) <= policy.obs_limit {
        return ManagedObservation::Full {
            text: obs.to_string(),
        };
    }
    if let Some(stripped) = obs.strip_suffix(TRUNCATION_MARKER) {
        let stripped = stripped.strip_suffix(' ').unwrap_or(stripped);
        if counter.count(stripped) <= policy.obs_limit {
            return ManagedObservation::Truncated {
                text: obs.to_string(),
            };
        }
    }
    let cut = counter.prefix_len(obs, policy.obs_limit);
    ManagedObservation::Truncated {
        text: format!("{} {}", &obs[..cut], TRUNCATION_MARKER),
    }
}

/// Derives the effective context for proposing step `t`.
///
/// `t` must point one past the last logged step. Thoughts and actions are
/// carried over for every step; observations are truncated inside the window
/// and masked outside it.
pub fn build_context(
    log: &TrajectoryLog,
    policy: &ContextPolicy,
    t: usize,
) -> Result<EffectiveContext, ContextError> {
    if t != log.steps.len() + 1 {
        return Err(ContextError::StepPointerMismatch {
            t,
            steps: log.steps.len(),
        });
    }
    let window = window_indices(t, policy.window);
    let entries = log
        .steps
        .iter()
        .map(|step| {
            let observation = match &step.observation {
                None => ManagedObservation::Absent,
                Some(obs) if window.contains(&step.index) => truncate_observation(obs, policy),
                Some(_) => ManagedObservation::Masked,
            };
            ContextEntry {
                index: step.index,
                thought: step.thought.clone(),
                action: step.action.clone(),
                observation,
            }
        })
        .collect();
    Ok(EffectiveContext {
        query: log.query.clone(),
        entries,
    })
}
