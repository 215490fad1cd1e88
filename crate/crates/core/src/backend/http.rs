//! Live chat-completions client.
//!
//! Speaks the common JSON-over-HTTP chat protocol: one user message holding
//! the rendered prompt, tool declarations attached, and the reply's
//! structured `tool_calls` (or tagged text) mapped onto the action protocol.
//! Transient failures are retried with a doubling backoff before giving up.

use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{
    parse_action, BackendError, ChatRequest, ChatResponse, ModelBackend, TokenUsage,
};
use crate::context::Action;
use crate::gateway::ToolCall;

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First retry delay; doubles on each subsequent retry.
    pub base_delay: Duration,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        HttpBackend {
            config,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(600))
                .build()
                .expect("reqwest client"),
        }
    }

    /// Reads `MODEL_ENDPOINT`, `MODEL_NAME`, and optional `MODEL_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var("MODEL_ENDPOINT")
            .map_err(|_| BackendError::Config("MODEL_ENDPOINT is not set".into()))?;
        let model = std::env::var("MODEL_NAME").unwrap_or_else(|_| "default".into());
        let mut config = HttpBackendConfig::new(endpoint, model);
        config.api_key = std::env::var("MODEL_API_KEY").ok();
        Ok(Self::new(config))
    }

    fn body_for(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.rendered }],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_output_tokens,
        });
        if !request.tools.is_null() {
            body["tools"] = request.tools.clone();
        }
        body
    }
}

impl ModelBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = self.body_for(request);
        let mut delay = self.config.base_delay;
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let value: Value = resp
                            .json()
                            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
                        return parse_chat_completion(&value);
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    last_error = format!("status {status}");
                    if !retryable {
                        return Err(BackendError::BadResponse(last_error));
                    }
                    tracing::warn!(attempt, %status, "endpoint busy, backing off");
                }
                Err(e) => {
                    last_error = e.to_string();
                    tracing::warn!(attempt, error = %last_error, "transport error, backing off");
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            detail: last_error,
        })
    }
}

/// Maps one chat-completion response body onto the action protocol.
///
/// Structured `tool_calls` take precedence over tagged text; when several
/// are present only the first is honored. A reply with neither tool calls
/// nor action tags is treated as a final answer — in the chat convention,
/// plain assistant text is the model's answer.
pub fn parse_chat_completion(value: &Value) -> Result<ChatResponse, BackendError> {
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::BadResponse("no choices[0].message".into()))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let usage = TokenUsage {
        prompt: value
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
        completion: value
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
    };

    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        if let Some(first) = calls.first() {
            if calls.len() > 1 {
                tracing::debug!(extra = calls.len() - 1, "dropping extra structured tool calls");
            }
            let call = structured_tool_call(first)?;
            return Ok(ChatResponse {
                thought: content.trim().to_string(),
                action: Action::ToolCall(call),
                usage,
            });
        }
    }

    let (thought, action) = parse_action(content);
    let action = match action {
        Action::Malformed { .. } if !content.trim().is_empty() => Action::FinalAnswer {
            text: content.trim().to_string(),
        },
        other => other,
    };
    Ok(ChatResponse {
        thought,
        action,
        usage,
    })
}

fn structured_tool_call(call: &Value) -> Result<ToolCall, BackendError> {
    let function = call
        .get("function")
        .ok_or_else(|| BackendError::BadResponse("tool call without function".into()))?;
    let name = function
        .get("name")
        .and_then(Value::as_str)
        .filter(|n| !n.is_empty())
        .ok_or_else(|| BackendError::BadResponse("tool call without name".into()))?;
    let arguments = match function.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(map)) => map.clone(),
        // The common wire format carries arguments as a JSON-encoded string.
        Some(Value::String(s)) => match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(map)) => map,
            Ok(Value::Null) => Map::new(),
            Ok(other) => {
                return Err(BackendError::BadResponse(format!(
                    "tool arguments must be an object, got {other}"
                )))
            }
            Err(e) => {
                return Err(BackendError::BadResponse(format!(
                    "tool arguments did not parse: {e}"
                )))
            }
        },
        Some(other) => {
            return Err(BackendError::BadResponse(format!(
                "tool arguments must be an object, got {other}"
            )))
        }
    };
    Ok(ToolCall {
        tool_name: name.to_string(),
        arguments,
        raw: Some(call.to_string()),
    })
}
