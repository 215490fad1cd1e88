//! Uniform gateway between the agent and its tools.
//!
//! Every tool call the model emits goes through [`Gateway::dispatch`], which
//! applies near-miss correction, the domain blocklist, and adapter-specific
//! handling, and always comes back with a [`ToolResult`] — tool failures are
//! observations for the model, never control-flow errors in the loop.

mod adapters;
mod blocklist;
mod correct;
mod sandbox;

pub use adapters::{
    AdapterError, Evidence, HttpFetcher, HttpSearch, MockFetcher, MockSearchIndex,
    ModelSummarizer, PassthroughSummarizer, SearchDoc, SearchHit, SearchProvider, Summarizer,
    UrlFetcher,
};
pub use blocklist::{BlockDecision, Blocklist, DenyCause};
pub use correct::{correct_tool_call, levenshtein, CorrectionError};
pub use sandbox::{ExecOutcome, LocalSandboxProvider, SandboxProvider, SandboxSession};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Scalar parameter types accepted in tool schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    String,
    Integer,
    Number,
    Boolean,
}

impl ParamKind {
    fn json_type(&self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Integer => "integer",
            ParamKind::Number => "number",
            ParamKind::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
}

/// Declared shape of one tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        let name = name.into();
        debug_assert!(is_identifier(&name), "tool name must be an identifier");
        ToolSpec {
            name,
            description: description.into(),
            params: Vec::new(),
        }
    }

    pub fn param(
        mut self,
        name: impl Into<String>,
        kind: ParamKind,
        required: bool,
        description: impl Into<String>,
    ) -> Self {
        let name = name.into();
        debug_assert!(is_identifier(&name), "parameter name must be an identifier");
        self.params.push(ParamSpec {
            name,
            kind,
            required,
            description: description.into(),
        });
        self
    }

    /// This tool's entry in the chat tool-declaration format.
    pub fn declaration(&self) -> Value {
        let mut properties = serde_json::Map::new();
        for p in &self.params {
            properties.insert(
                p.name.clone(),
                json!({ "type": p.kind.json_type(), "description": p.description }),
            );
        }
        let required: Vec<&str> = self
            .params
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                }
            }
        })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A tool invocation as parsed from model output.
///
/// `arguments` uses `serde_json::Map`, which is ordered, so serialization is
/// deterministic. `raw` preserves the original emitted form for tracing and
/// survives name/argument correction untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(rename = "name")]
    pub tool_name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw: Option<String>,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>) -> Self {
        ToolCall {
            tool_name: tool_name.into(),
            arguments: serde_json::Map::new(),
            raw: None,
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.arguments.insert(name.into(), value.into());
        self
    }

    fn str_arg(&self, name: &str) -> Result<&str, OpError> {
        match self.arguments.get(name) {
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(OpError::Precondition(format!(
                "argument '{name}' must be a string, got {other}"
            ))),
            None => Err(OpError::Precondition(format!("missing argument '{name}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
    Blocked,
}

/// Outcome of one tool execution, in the shape the loop records as an
/// observation. `latency` is kept for operator-facing logs only and is never
/// serialized, so trajectory files stay byte-reproducible.
#[derive(Debug, Clone)]
pub struct ToolResult {
    pub tool_name: String,
    pub output: String,
    pub status: ToolStatus,
    pub latency: Duration,
}

/// What `dispatch` settled on: the effective call (after any correction)
/// plus its result.
#[derive(Debug, Clone)]
pub struct DispatchOutcome {
    pub call: ToolCall,
    pub result: ToolResult,
}

/// Failures surfaced by the typed gateway operations. `dispatch` flattens
/// these into `ToolResult` text so the agent loop never sees an `Err`.
#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error("{0}")]
    Precondition(String),
    #[error("blocked: {0}")]
    Blocked(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("all retrieval backends failed: {0}")]
    RetrievalExhausted(String),
    #[error("unknown sandbox id '{0}'")]
    UnknownSandbox(String),
    #[error("file transfer failed: {0}")]
    Transfer(String),
}

/// Receipt for a completed file transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferReceipt {
    pub path: String,
    pub bytes: u64,
}

/// Standard tool names. The correction pass maps near-misses onto these.
pub const TOOL_SEARCH: &str = "google_search";
pub const TOOL_SCRAPE: &str = "scrape_and_extract_info";
pub const TOOL_CREATE_SANDBOX: &str = "create_sandbox";
pub const TOOL_RUN_COMMAND: &str = "run_command";
pub const TOOL_RUN_PYTHON: &str = "run_python_code";
pub const TOOL_UPLOAD: &str = "upload_file_from_local_to_sandbox";
pub const TOOL_DOWNLOAD: &str = "download_file_from_sandbox_to_local";
pub const TOOL_FETCH_TO_SANDBOX: &str = "download_file_from_internet_to_sandbox";

/// Declarations for the standard tool surface, in a fixed order.
pub fn standard_registry() -> Vec<ToolSpec> {
    vec![
        ToolSpec::new(TOOL_SEARCH, "Web search. Returns ranked results with title, URL, and snippet.")
            .param("query", ParamKind::String, true, "Search query text."),
        ToolSpec::new(
            TOOL_SCRAPE,
            "Fetch a web page and extract the information relevant to a directive.",
        )
        .param("url", ParamKind::String, true, "Page URL to fetch.")
        .param(
            "info_to_extract",
            ParamKind::String,
            true,
            "What to look for in the page.",
        ),
        ToolSpec::new(TOOL_CREATE_SANDBOX, "Create an isolated execution sandbox. Returns its id."),
        ToolSpec::new(TOOL_RUN_COMMAND, "Run a shell command inside a sandbox.")
            .param("sandbox_id", ParamKind::String, true, "Target sandbox id.")
            .param("command", ParamKind::String, true, "Shell command line."),
        ToolSpec::new(TOOL_RUN_PYTHON, "Run a Python snippet inside a sandbox.")
            .param("sandbox_id", ParamKind::String, true, "Target sandbox id.")
            .param("code", ParamKind::String, true, "Python source to execute."),
        ToolSpec::new(TOOL_UPLOAD, "Copy a local file into a sandbox.")
            .param("sandbox_id", ParamKind::String, true, "Target sandbox id.")
            .param("local_path", ParamKind::String, true, "Path on the local machine.")
            .param("sandbox_path", ParamKind::String, true, "Destination path inside the sandbox."),
        ToolSpec::new(TOOL_DOWNLOAD, "Copy a file out of a sandbox to the local machine.")
            .param("sandbox_id", ParamKind::String, true, "Source sandbox id.")
            .param("sandbox_path", ParamKind::String, true, "Path inside the sandbox.")
            .param("local_path", ParamKind::String, true, "Destination path on the local machine."),
        ToolSpec::new(TOOL_FETCH_TO_SANDBOX, "Download a URL directly into a sandbox.")
            .param("sandbox_id", ParamKind::String, true, "Target sandbox id.")
            .param("url", ParamKind::String, true, "URL to download.")
            .param("sandbox_path", ParamKind::String, true, "Destination path inside the sandbox."),
    ]
}

/// The gateway itself: registry, policy, and adapter wiring.
pub struct Gateway {
    registry: Vec<ToolSpec>,
    blocklist: Blocklist,
    search: Box<dyn SearchProvider>,
    /// Fetch chain tried in order; the first success wins.
    fetchers: Vec<Box<dyn UrlFetcher>>,
    summarizer: Box<dyn Summarizer>,
    sandbox_provider: Box<dyn SandboxProvider>,
    sandboxes: Mutex<BTreeMap<String, Box<dyn SandboxSession>>>,
    next_sandbox_id: AtomicU64,
}

impl Gateway {
    pub fn new(
        search: Box<dyn SearchProvider>,
        fetchers: Vec<Box<dyn UrlFetcher>>,
        summarizer: Box<dyn Summarizer>,
        sandbox_provider: Box<dyn SandboxProvider>,
        blocklist: Blocklist,
    ) -> Self {
        Gateway {
            registry: standard_registry(),
            blocklist,
            search,
            fetchers,
            summarizer,
            sandbox_provider,
            sandboxes: Mutex::new(BTreeMap::new()),
            next_sandbox_id: AtomicU64::new(1),
        }
    }

    pub fn registry(&self) -> &[ToolSpec] {
        &self.registry
    }

    pub fn blocklist(&self) -> &Blocklist {
        &self.blocklist
    }

    /// Full tool catalog in the chat tool-declaration format, in
    /// registration order.
    pub fn tool_catalog(&self) -> Value {
        Value::Array(self.registry.iter().map(ToolSpec::declaration).collect())
    }

    /// Routes one model-emitted call: correction, policy, adapter, result.
    /// Total — failures become `ToolResult`s with a non-`Ok` status.
    pub fn dispatch(&self, call: &ToolCall) -> DispatchOutcome {
        let started = Instant::now();
        let effective = match correct_tool_call(call, &self.registry) {
            Ok(c) => c,
            Err(err) => {
                tracing::debug!(tool = %call.tool_name, %err, "tool call rejected");
                return DispatchOutcome {
                    call: call.clone(),
                    result: ToolResult {
                        tool_name: call.tool_name.clone(),
                        output: format!("Tool call could not be routed: {err}"),
                        status: ToolStatus::Error,
                        latency: started.elapsed(),
                    },
                };
            }
        };
        if effective.tool_name != call.tool_name {
            tracing::debug!(
                from = %call.tool_name,
                to = %effective.tool_name,
                "corrected tool name"
            );
        }
        let (output, status) = match self.execute(&effective) {
            Ok(text) => (text, ToolStatus::Ok),
            Err(OpError::Blocked(reason)) => (format!("Blocked: {reason}"), ToolStatus::Blocked),
            Err(err) => (format!("Tool error: {err}"), ToolStatus::Error),
        };
        let tool_name = effective.tool_name.clone();
        DispatchOutcome {
            call: effective,
            result: ToolResult {
                tool_name,
                output,
                status,
                latency: started.elapsed(),
            },
        }
    }

    fn execute(&self, call: &ToolCall) -> Result<String, OpError> {
        match call.tool_name.as_str() {
            TOOL_SEARCH => {
                let hits = self.search_web(call.str_arg("query")?)?;
                Ok(render_search_hits(&hits))
            }
            TOOL_SCRAPE => {
                let evidence =
                    self.scrape_and_extract(call.str_arg("url")?, call.str_arg("info_to_extract")?)?;
                Ok(format!(
                    "[retrieved via {}]\n{}",
                    evidence.fetched_by, evidence.text
                ))
            }
            TOOL_CREATE_SANDBOX => {
                let id = self.create_sandbox()?;
                Ok(format!("sandbox created: {id}"))
            }
            TOOL_RUN_COMMAND => {
                let outcome =
                    self.run_command(call.str_arg("sandbox_id")?, call.str_arg("command")?)?;
                render_exec(outcome)
            }
            TOOL_RUN_PYTHON => {
                let outcome =
                    self.run_python_code(call.str_arg("sandbox_id")?, call.str_arg("code")?)?;
                render_exec(outcome)
            }
            TOOL_UPLOAD => {
                let receipt = self.upload_file(
                    call.str_arg("sandbox_id")?,
                    Path::new(call.str_arg("local_path")?),
                    call.str_arg("sandbox_path")?,
                )?;
                Ok(format!(
                    "uploaded {} bytes to {}",
                    receipt.bytes, receipt.path
                ))
            }
            TOOL_DOWNLOAD => {
                let receipt = self.download_file(
                    call.str_arg("sandbox_id")?,
                    call.str_arg("sandbox_path")?,
                    Path::new(call.str_arg("local_path")?),
                )?;
                Ok(format!(
                    "downloaded {} bytes to {}",
                    receipt.bytes, receipt.path
                ))
            }
            TOOL_FETCH_TO_SANDBOX => {
                let receipt = self.download_to_sandbox(
                    call.str_arg("sandbox_id")?,
                    call.str_arg("url")?,
                    call.str_arg("sandbox_path")?,
                )?;
                Ok(format!(
                    "downloaded {} bytes to {}",
                    receipt.bytes, receipt.path
                ))
            }
            other => Err(OpError::Precondition(format!(
                "tool '{other}' has no adapter"
            ))),
        }
    }

    /// Search with blocklist filtering. Surviving hits are re-ranked densely
    /// from 1 so the model never sees gaps.
    pub fn search_web(&self, query: &str) -> Result<Vec<SearchHit>, OpError> {
        if query.trim().is_empty() {
            return Err(OpError::Precondition("search query is empty".into()));
        }
        let raw = self.search.search(query)?;
        let mut hits: Vec<SearchHit> = raw
            .into_iter()
            .filter(|hit| match self.blocklist.check(&hit.url) {
                BlockDecision::Allow => true,
                BlockDecision::Deny(cause) => {
                    tracing::debug!(url = %hit.url, reason = %cause.describe(), "dropped search hit");
                    false
                }
            })
            .collect();
        for (i, hit) in hits.iter_mut().enumerate() {
            hit.rank = i + 1;
        }
        Ok(hits)
    }

    /// Fetches `url` (first fetcher in the chain that succeeds) and reduces
    /// the page to the part relevant to `directive`.
    pub fn scrape_and_extract(&self, url: &str, directive: &str) -> Result<Evidence, OpError> {
        if let BlockDecision::Deny(cause) = self.blocklist.check(url) {
            return Err(OpError::Blocked(cause.describe()));
        }
        if self.fetchers.is_empty() {
            return Err(OpError::RetrievalExhausted("no fetchers configured".into()));
        }
        let mut failures = Vec::new();
        for fetcher in &self.fetchers {
            match fetcher.fetch(url) {
                Ok(bytes) => {
                    let page = String::from_utf8_lossy(&bytes).into_owned();
                    let text = self.summarizer.summarize(&page, directive)?;
                    return Ok(Evidence {
                        text,
                        fetched_by: fetcher.name().to_string(),
                    });
                }
                Err(err) => {
                    tracing::debug!(fetcher = fetcher.name(), %err, "fetch failed, trying next");
                    failures.push(format!("{}: {err}", fetcher.name()));
                }
            }
        }
        Err(OpError::RetrievalExhausted(failures.join("; ")))
    }

    /// Creates a sandbox and returns its id. Ids are unique for the lifetime
    /// of the gateway.
    pub fn create_sandbox(&self) -> Result<String, OpError> {
        let session = self.sandbox_provider.create()?;
        let id = format!("sbx-{}", self.next_sandbox_id.fetch_add(1, Ordering::SeqCst));
        self.sandboxes
            .lock()
            .expect("sandbox registry poisoned")
            .insert(id.clone(), session);
        Ok(id)
    }

    pub fn run_command(&self, sandbox_id: &str, command: &str) -> Result<ExecOutcome, OpError> {
        self.with_sandbox(sandbox_id, |s| s.run_command(command))
    }

    pub fn run_python_code(&self, sandbox_id: &str, code: &str) -> Result<ExecOutcome, OpError> {
        self.with_sandbox(sandbox_id, |s| s.run_python(code))
    }

    /// Local file -> sandbox path.
    pub fn upload_file(
        &self,
        sandbox_id: &str,
        local: &Path,
        sandbox_path: &str,
    ) -> Result<TransferReceipt, OpError> {
        let bytes = std::fs::read(local)
            .map_err(|e| OpError::Transfer(format!("read {}: {e}", local.display())))?;
        let written = self.with_sandbox(sandbox_id, |s| s.write_file(sandbox_path, &bytes))?;
        Ok(TransferReceipt {
            path: sandbox_path.to_string(),
            bytes: written,
        })
    }

    /// Sandbox path -> local file.
    pub fn download_file(
        &self,
        sandbox_id: &str,
        sandbox_path: &str,
        local: &Path,
    ) -> Result<TransferReceipt, OpError> {
        let bytes = self.with_sandbox(sandbox_id, |s| s.read_file(sandbox_path))?;
        std::fs::write(local, &bytes)
            .map_err(|e| OpError::Transfer(format!("write {}: {e}", local.display())))?;
        Ok(TransferReceipt {
            path: local.display().to_string(),
            bytes: bytes.len() as u64,
        })
    }

    /// URL -> sandbox path, subject to the same blocklist and fetch chain as
    /// scraping.
    pub fn download_to_sandbox(
        &self,
        sandbox_id: &str,
        url: &str,
        sandbox_path: &str,
    ) -> Result<TransferReceipt, OpError> {
        if let BlockDecision::Deny(cause) = self.blocklist.check(url) {
            return Err(OpError::Blocked(cause.describe()));
        }
        let mut failures = Vec::new();
        let mut fetched = None;
        for fetcher in &self.fetchers {
            match fetcher.fetch(url) {
                Ok(bytes) => {
                    fetched = Some(bytes);
                    break;
                }
                Err(err) => failures.push(format!("{}: {err}", fetcher.name())),
            }
        }
        let Some(bytes) = fetched else {
            return Err(OpError::RetrievalExhausted(if failures.is_empty() {
                "no fetchers configured".into()
            } else {
                failures.join("; ")
            }));
        };
        let written = self.with_sandbox(sandbox_id, |s| s.write_file(sandbox_path, &bytes))?;
        Ok(TransferReceipt {
            path: sandbox_path.to_string(),
            bytes: written,
        })
    }

    fn with_sandbox<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Box<dyn SandboxSession>) -> Result<T, AdapterError>,
    ) -> Result<T, OpError> {
        let mut sandboxes = self.sandboxes.lock().expect("sandbox registry poisoned");
        let session = sandboxes
            .get_mut(id)
            .ok_or_else(|| OpError::UnknownSandbox(id.to_string()))?;
        f(session).map_err(OpError::from)
    }
}

fn render_search_hits(hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return "No results.".to_string();
    }
    let mut out = String::new();
    for hit in hits {
        out.push_str(&format!(
            "{}. {}\n   {}\n   {}\n",
            hit.rank, hit.title, hit.url, hit.snippet
        ));
    }
    out
}

fn render_exec(outcome: ExecOutcome) -> Result<String, OpError> {
    if outcome.timed_out {
        return Err(OpError::Precondition(format!(
            "execution timed out\n{}",
            outcome.output
        )));
    }
    let code = outcome
        .exit_code
        .map_or_else(|| "unknown".to_string(), |c| c.to_string());
    Ok(format!("exit status: {code}\n{}", outcome.output))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Gateway wired entirely from in-memory fakes.
    pub fn mock_gateway(docs: Vec<SearchDoc>, blocked: &[&str]) -> Gateway {
        let mut pages = BTreeMap::new();
        pages.insert(
            "https://example.org/page".to_string(),
            b"Paris is the capital of France.\nUnrelated footer line.".to_vec(),
        );
        Gateway::new(
            Box::new(MockSearchIndex::new(docs)),
            vec![Box::new(MockFetcher::new("primary", pages))],
            Box::new(PassthroughSummarizer),
            Box::new(LocalSandboxProvider::default()),
            Blocklist::from_domains(blocked.iter().map(|s| s.to_string())),
        )
    }

    pub fn sample_docs() -> Vec<SearchDoc> {
        vec![
            SearchDoc {
                title: "Capital of France".into(),
                url: "https://example.org/page".into(),
                snippet: "Paris is the capital of France".into(),
            },
            SearchDoc {
                title: "Leaked answers".into(),
                url: "https://contaminated.test/answers".into(),
                snippet: "benchmark answer key France Paris".into(),
            },
            SearchDoc {
                title: "France travel".into(),
                url: "https://travel.example.com/france".into(),
                snippet: "visiting France".into(),
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::{mock_gateway, sample_docs};
    use super::*;

    #[test]
    fn catalog_lists_every_tool_in_registration_order() {
        let gw = mock_gateway(vec![], &[]);
        let catalog = gw.tool_catalog();
        let arr = catalog.as_array().unwrap();
        assert_eq!(arr.len(), 8);
        let names: Vec<&str> = arr
            .iter()
            .map(|d| d["function"]["name"].as_str().unwrap())
            .collect();
        assert_eq!(
            names,
            vec![
                TOOL_SEARCH,
                TOOL_SCRAPE,
                TOOL_CREATE_SANDBOX,
                TOOL_RUN_COMMAND,
                TOOL_RUN_PYTHON,
                TOOL_UPLOAD,
                TOOL_DOWNLOAD,
                TOOL_FETCH_TO_SANDBOX,
            ]
        );
        // Declarations carry a parameter schema with required names.
        let search = &arr[0]["function"]["parameters"];
        assert_eq!(search["properties"]["query"]["type"], "string");
        assert_eq!(search["required"][0], "query");
        // Serialization is stable.
        assert_eq!(
            serde_json::to_string(&catalog).unwrap(),
            serde_json::to_string(&gw.tool_catalog()).unwrap()
        );
    }

    #[test]
    fn search_filters_blocked_hosts_and_reranks() {
        let gw = mock_gateway(sample_docs(), &["contaminated.test"]);
        let hits = gw.search_web("capital France").unwrap();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|h| !h.url.contains("contaminated.test")));
        let ranks: Vec<usize> = hits.iter().map(|h| h.rank).collect();
        let expected: Vec<usize> = (1..=hits.len()).collect();
        assert_eq!(ranks, expected);
    }

    #[test]
    fn dispatch_is_total_for_garbage_calls() {
        let gw = mock_gateway(vec![], &[]);
        let call = ToolCall::new("definitely_not_a_tool").arg("x", 1);
        let outcome = gw.dispatch(&call);
        assert_eq!(outcome.result.status, ToolStatus::Error);
        assert!(outcome.result.output.contains("could not be routed"));
    }

    #[test]
    fn dispatch_corrects_near_miss_names() {
        let gw = mock_gateway(sample_docs(), &[]);
        let call = ToolCall::new("google_serach").arg("query", "capital France");
        let outcome = gw.dispatch(&call);
        assert_eq!(outcome.call.tool_name, TOOL_SEARCH);
        assert_eq!(outcome.result.status, ToolStatus::Ok);
    }

    #[test]
    fn scrape_blocked_url_names_the_domain() {
        let gw = mock_gateway(vec![], &["example.org"]);
        let err = gw
            .scrape_and_extract("https://sub.example.org/x", "anything")
            .unwrap_err();
        match err {
            OpError::Blocked(reason) => assert!(reason.contains("example.org")),
            other => panic!("expected Blocked, got {other:?}"),
        }
    }

    #[test]
    fn scrape_reports_which_fetcher_succeeded() {
        let gw = mock_gateway(vec![], &[]);
        let ev = gw
            .scrape_and_extract("https://example.org/page", "capital")
            .unwrap();
        assert_eq!(ev.fetched_by, "primary");
        assert!(ev.text.contains("Paris"));
        assert!(!ev.text.contains("footer"));
    }

    #[test]
    fn sandbox_lifecycle_roundtrip() {
        let gw = mock_gateway(vec![], &[]);
        let id = gw.create_sandbox().unwrap();
        let out = gw.run_command(&id, "echo hello").unwrap();
        assert_eq!(out.exit_code, Some(0));
        assert!(out.output.contains("hello"));
        assert!(matches!(
            gw.run_command("sbx-404", "true"),
            Err(OpError::UnknownSandbox(_))
        ));
    }

    #[test]
    fn sandbox_ids_are_unique() {
        let gw = mock_gateway(vec![], &[]);
        let a = gw.create_sandbox().unwrap();
        let b = gw.create_sandbox().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn file_transfer_roundtrip_reports_destination_and_size() {
        let gw = mock_gateway(vec![], &[]);
        let id = gw.create_sandbox().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("in.txt");
        std::fs::write(&src, b"payload").unwrap();

        let up = gw.upload_file(&id, &src, "data/in.txt").unwrap();
        assert_eq!(up.bytes, 7);
        assert_eq!(up.path, "data/in.txt");

        let dst = dir.path().join("out.txt");
        let down = gw.download_file(&id, "data/in.txt", &dst).unwrap();
        assert_eq!(down.bytes, 7);
        assert_eq!(std::fs::read(&dst).unwrap(), b"payload");
    }

    #[test]
    fn internet_download_respects_blocklist() {
        let gw = mock_gateway(vec![], &["example.org"]);
        let id = gw.create_sandbox().unwrap();
        let err = gw
            .download_to_sandbox(&id, "https://example.org/page", "page.html")
            .unwrap_err();
        assert!(matches!(err, OpError::Blocked(_)));

        let gw_open = mock_gateway(vec![], &[]);
        let id = gw_open.create_sandbox().unwrap();
        let receipt = gw_open
            .download_to_sandbox(&id, "https://example.org/page", "page.html")
            .unwrap();
        assert!(receipt.bytes > 0);
        assert_eq!(receipt.path, "page.html");
    }
}
