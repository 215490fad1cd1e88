//! Model backend abstraction.
//!
//! The agent loop talks to any chat model through [`ModelBackend`]. Two
//! implementations ship here: [`ScriptedBackend`] replays canned responses
//! for deterministic tests and offline demos, and [`HttpBackend`] speaks the
//! common JSON-over-HTTP chat-completions protocol to a live endpoint.
//!
//! Requests carry a fully rendered prompt plus a local token count, so
//! budget violations are caught before anything goes over the wire.

mod http;
mod parse;
mod render;
mod scripted;

pub use http::{parse_chat_completion, HttpBackend, HttpBackendConfig};
pub use parse::{parse_action, render_action, FINAL_CLOSE, FINAL_OPEN, TOOL_CALL_CLOSE, TOOL_CALL_OPEN};
pub use render::{
    render_request, RenderOptions, ANSWER_NOW_INSTRUCTION, FORMAT_REMINDER_INSTRUCTION,
    SYSTEM_TEMPLATE,
};
pub use scripted::ScriptedBackend;

use serde::{Deserialize, Serialize};

use crate::context::Action;

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    /// Upper bound on the rendered prompt, in the caller's token metric.
    pub context_limit: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            top_p: 0.95,
            max_output_tokens: 16_384,
            context_limit: 262_144,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(BackendError::InvalidSampling(format!(
                "top_p must be in [0, 1], got {}",
                self.top_p
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidSampling(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidSampling(
                "max_output_tokens must be >= 1".into(),
            ));
        }
        if self.context_limit == 0 {
            return Err(BackendError::InvalidSampling(
                "context_limit must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A fully prepared model request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    /// The complete prompt text, already containing system instructions,
    /// the task, and the managed history.
    pub rendered: String,
    /// Tool declarations in the chat tool-declaration format, or `Null`.
    pub tools: serde_json::Value,
    pub sampling: SamplingParams,
    /// Prompt size in the caller's token metric, checked against
    /// `sampling.context_limit` before any network traffic.
    pub token_count: usize,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        self.sampling.validate()?;
        if self.token_count > self.sampling.context_limit {
            return Err(BackendError::ContextOverflow {
                tokens: self.token_count,
                limit: self.sampling.context_limit,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u32,
    pub completion: u32,
}

/// One model turn, already parsed into the action protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub thought: String,
    pub action: Action,
    pub usage: TokenUsage,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("rendered prompt ({tokens} tokens) exceeds the {limit}-token context limit")]
    ContextOverflow { tokens: usize, limit: usize },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
    #[error("transport failed after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("scripted backend queue exhausted after {served} responses")]
    ScriptedExhausted { served: usize },
    #[error("endpoint returned an unusable response: {0}")]
    BadResponse(String),
}

/// Anything that can complete a chat request. Implementations must be safe
/// to share across harness worker threads.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sampling_matches_run_defaults() {
        let s = SamplingParams::default();
        assert_eq!(s.temperature, 1.0);
        assert_eq!(s.top_p, 0.95);
        assert_eq!(s.max_output_tokens, 16_384);
        assert_eq!(s.context_limit, 262_144);
        s.validate().unwrap();
    }

    #[test]
    fn sampling_bounds_are_enforced() {
        let mut s = SamplingParams {
            top_p: 1.2,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        s.top_p = 0.95;
        s.temperature = -0.1;
        assert!(s.validate().is_err());
        s.temperature = 0.0;
        s.max_output_tokens = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn oversized_requests_fail_locally() {
        let request = ChatRequest {
            rendered: "x".repeat(64),
            tools: serde_json::Value::Null,
            sampling: SamplingParams {
                context_limit: 10,
                ..Default::default()
            },
            token_count: 11,
        };
        assert!(matches!(
            request.validate(),
            Err(BackendError::ContextOverflow {
                tokens: 11,
                limit: 10
            })
        ));
    }
}
