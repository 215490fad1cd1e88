//! Deterministic backend that replays a queue of raw response strings.
//!
//! Each string goes through the same action parser as live output, so
//! scripts exercise the identical code path the real model would. Every
//! incoming request is recorded verbatim, which is how tests assert
//! byte-level prompt reproducibility.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{parse_action, BackendError, ChatRequest, ChatResponse, ModelBackend, TokenUsage};

pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<ChatRequest>>,
    served: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
            served: AtomicUsize::new(0),
        }
    }

    /// Loads one raw response per line from a JSON Lines file of
    /// `{"raw": "..."}` objects.
    pub fn load(path: &std::path::Path) -> Result<Self, BackendError> {
        #[derive(serde::Deserialize)]
        struct Line {
            raw: String,
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::BadResponse(format!("script {}: {e}", path.display())))?;
        let mut responses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line).map_err(|e| {
                BackendError::BadResponse(format!("script {} line {}: {e}", path.display(), i + 1))
            })?;
            responses.push(parsed.raw);
        }
        Ok(Self::new(responses))
    }

    /// Every request seen so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script queue poisoned").len()
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.requests
            .lock()
            .expect("request log poisoned")
            .push(request.clone());
        let raw = self
            .queue
            .lock()
            .expect("script queue poisoned")
            .pop_front()
            .ok_or(BackendError::ScriptedExhausted {
                served: self.served.load(Ordering::SeqCst),
            })?;
        self.served.fetch_add(1, Ordering::SeqCst);
        let (thought, action) = parse_action(&raw);
        Ok(ChatResponse {
            thought,
            action,
            usage: TokenUsage::default(),
        })
    }
}
