//! Prompt rendering.
//!
//! Turns an [`EffectiveContext`] into the exact request text, deterministic
//! byte for byte: same context and options, same prompt. The episode number
//! is deliberately not rendered, so a fresh episode for the same query
//! reproduces the first request exactly.

use serde_json::Value;

use super::{ChatRequest, SamplingParams};
use crate::context::{EffectiveContext, TokenCounter};

pub const SYSTEM_TEMPLATE: &str = include_str!("../../templates/system_v1.txt");

/// Appended when the model's previous turn failed to parse.
pub const FORMAT_REMINDER_INSTRUCTION: &str = "Reminder: your previous output could not be parsed. Reply with your reasoning followed by exactly one <tool_call>{\"name\": ..., \"arguments\": {...}}</tool_call> or one <final_answer>...</final_answer> block.";

/// Appended for the forced answer attempt after the last episode runs out of
/// turns.
pub const ANSWER_NOW_INSTRUCTION: &str = "You are out of turns. Using only the work above, output your single best final answer now inside <final_answer>...</final_answer>. Do not call any tools.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Nudge the model back onto the action protocol.
    pub format_reminder: bool,
    /// Demand an immediate final answer.
    pub answer_now: bool,
}

/// Renders the full request for the next step.
pub fn render_request(
    ctx: &EffectiveContext,
    tools: Value,
    sampling: SamplingParams,
    tokenizer: TokenCounter,
    opts: RenderOptions,
) -> ChatRequest {
    let mut out = String::with_capacity(SYSTEM_TEMPLATE.len() + 256);
    out.push_str(SYSTEM_TEMPLATE.trim_end());
    out.push_str("\n\nTask: ");
    out.push_str(&ctx.query);
    out.push('\n');
    for entry in &ctx.entries {
        out.push_str(&format!("\nStep {}:\n", entry.index));
        out.push_str("Thought: ");
        out.push_str(&entry.thought);
        out.push('\n');
        out.push_str("Action: ");
        out.push_str(&super::render_action(&entry.action));
        out.push('\n');
        if let Some(obs) = entry.observation.rendered() {
            out.push_str("Observation: ");
            out.push_str(obs);
            out.push('\n');
        }
    }
    if opts.format_reminder {
        out.push('\n');
        out.push_str(FORMAT_REMINDER_INSTRUCTION);
        out.push('\n');
    }
    if opts.answer_now {
        out.push('\n');
        out.push_str(ANSWER_NOW_INSTRUCTION);
        out.push('\n');
    }
    let token_count = tokenizer.count(&out);
    ChatRequest {
        rendered: out,
        tools,
        sampling,
        token_count,
    }
}
