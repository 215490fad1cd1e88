//! Pluggable adapters behind the gateway: search, page fetching, and
//! summarization. Each trait ships a deterministic in-memory fake for tests
//! and an HTTP implementation for live runs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{ChatRequest, ModelBackend, SamplingParams};
use crate::context::{Action, TokenCounter};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One ranked search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
    /// 1-based rank after gateway filtering.
    #[serde(default)]
    pub rank: usize,
}

pub trait SearchProvider: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, AdapterError>;
}

/// Document in the offline search corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchDoc {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

/// Deterministic in-memory search: ranks documents by how many distinct
/// query terms they contain, ties broken by corpus order. Every query is
/// recorded so tests can assert what the agent actually searched for.
pub struct MockSearchIndex {
    docs: Vec<SearchDoc>,
    queries: Mutex<Vec<String>>,
}

impl MockSearchIndex {
    pub fn new(docs: Vec<SearchDoc>) -> Self {
        MockSearchIndex {
            docs,
            queries: Mutex::new(Vec::new()),
        }
    }

    /// Loads a JSON array of documents.
    pub fn load(path: &std::path::Path) -> Result<Self, AdapterError> {
        let text = std::fs::read_to_string(path)?;
        let docs: Vec<SearchDoc> = serde_json::from_str(&text)
            .map_err(|e| AdapterError::BadResponse(format!("corpus {}: {e}", path.display())))?;
        Ok(Self::new(docs))
    }

    pub fn recorded_queries(&self) -> Vec<String> {
        self.queries.lock().expect("query log poisoned").clone()
    }
}

impl SearchProvider for MockSearchIndex {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, AdapterError> {
        self.queries
            .lock()
            .expect("query log poisoned")
            .push(query.to_string());
        // Whole-word matching: "rust" must not match inside "crustacean".
        let tokenize = |text: &str| -> std::collections::BTreeSet<String> {
            text.to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect()
        };
        let terms = tokenize(query);
        let mut scored: Vec<(usize, &SearchDoc)> = self
            .docs
            .iter()
            .filter_map(|doc| {
                let words = tokenize(&format!("{} {}", doc.title, doc.snippet));
                let overlap = terms.intersection(&words).count();
                (overlap > 0).then_some((overlap, doc))
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0)); // stable: corpus order breaks ties
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (_, doc))| SearchHit {
                title: doc.title.clone(),
                url: doc.url.clone(),
                snippet: doc.snippet.clone(),
                rank: i + 1,
            })
            .collect())
    }
}

/// Live search endpoint speaking `GET {endpoint}?q=...` with a JSON array of
/// `{title, url, snippet}` objects in response.
pub struct HttpSearch {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpSearch {
            endpoint: endpoint.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("reqwest client"),
        }
    }
}

impl SearchProvider for HttpSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, AdapterError> {
        let mut url = url::Url::parse(&self.endpoint)
            .map_err(|e| AdapterError::Unreachable(format!("bad endpoint: {e}")))?;
        url.query_pairs_mut().append_pair("q", query);
        let resp = self
            .client
            .get(url.as_str())
            .send()
            .map_err(|e| AdapterError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AdapterError::Unreachable(format!("status {status}")));
        }
        let hits: Vec<SearchHit> = resp
            .json()
            .map_err(|e| AdapterError::BadResponse(e.to_string()))?;
        Ok(hits
            .into_iter()
            .enumerate()
            .map(|(i, mut h)| {
                h.rank = i + 1;
                h
            })
            .collect())
    }
}

/// One layer of the page-retrieval chain.
pub trait UrlFetcher: Send + Sync {
    /// Short name recorded in evidence metadata (e.g. `"direct"`, `"proxy"`).
    fn name(&self) -> &str;
    fn fetch(&self, url: &str) -> Result<Vec<u8>, AdapterError>;
}

/// In-memory fetcher serving a fixed URL -> bytes map; anything else fails.
/// Counts attempts so tests can assert fallback order.
pub struct MockFetcher {
    name: String,
    pages: BTreeMap<String, Vec<u8>>,
    attempts: AtomicUsize,
}

impl MockFetcher {
    pub fn new(name: impl Into<String>, pages: BTreeMap<String, Vec<u8>>) -> Self {
        MockFetcher {
            name: name.into(),
            pages,
            attempts: AtomicUsize::new(0),
        }
    }

    /// A fetcher that fails every request.
    pub fn failing(name: impl Into<String>) -> Self {
        Self::new(name, BTreeMap::new())
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl UrlFetcher for MockFetcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, AdapterError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        self.pages
            .get(url)
            .cloned()
            .ok_or_else(|| AdapterError::Unreachable(format!("no page for {url}")))
    }
}

/// Plain HTTP GET fetcher.
pub struct HttpFetcher {
    name: String,
    client: reqwest::blocking::Client,
}

impl HttpFetcher {
    pub fn new(name: impl Into<String>) -> Self {
        HttpFetcher {
            name: name.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("reqwest client"),
        }
    }
}

impl UrlFetcher for HttpFetcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, AdapterError> {
        let resp = self
            .client
            .get(url)
            .send()
            .map_err(|e| AdapterError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AdapterError::Unreachable(format!("status {status}")));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| AdapterError::BadResponse(e.to_string()))?;
        Ok(bytes.to_vec())
    }
}

/// What page retrieval hands back to the agent: the extracted text plus
/// which fetcher in the fallback chain actually got the page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub text: String,
    pub fetched_by: String,
}

/// Reduces a fetched page to the part relevant to a directive.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, page: &str, directive: &str) -> Result<String, AdapterError>;
}

/// Keyword filter used in offline runs: keeps the lines sharing a term with
/// the directive, or the whole page when nothing matches.
pub struct PassthroughSummarizer;

impl Summarizer for PassthroughSummarizer {
    fn summarize(&self, page: &str, directive: &str) -> Result<String, AdapterError> {
        let terms: Vec<String> = directive
            .to_lowercase()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if terms.is_empty() {
            return Ok(page.trim().to_string());
        }
        let matched: Vec<&str> = page
            .lines()
            .filter(|line| {
                let lower = line.to_lowercase();
                terms.iter().any(|t| lower.contains(t))
            })
            .collect();
        if matched.is_empty() {
            Ok(page.trim().to_string())
        } else {
            Ok(matched.join("\n"))
        }
    }
}

const SUMMARIZER_TEMPLATE: &str = include_str!("../../templates/summarizer_v1.txt");

/// Delegates extraction to a model backend.
pub struct ModelSummarizer {
    backend: Arc<dyn ModelBackend>,
    sampling: SamplingParams,
}

impl ModelSummarizer {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        ModelSummarizer {
            backend,
            sampling: SamplingParams::default(),
        }
    }
}

impl Summarizer for ModelSummarizer {
    fn summarize(&self, page: &str, directive: &str) -> Result<String, AdapterError> {
        let rendered = SUMMARIZER_TEMPLATE
            .replace("{directive}", directive)
            .replace("{page}", page);
        let request = ChatRequest {
            token_count: TokenCounter::Bytes4.count(&rendered),
            rendered,
            tools: serde_json::Value::Null,
            sampling: self.sampling.clone(),
        };
        let response = self
            .backend
            .complete(&request)
            .map_err(|e| AdapterError::Unreachable(e.to_string()))?;
        match response.action {
            Action::FinalAnswer { text } => Ok(text),
            _ if !response.thought.trim().is_empty() => Ok(response.thought.trim().to_string()),
            _ => Err(AdapterError::BadResponse(
                "summarizer returned no usable text".into(),
            )),
        }
    }
}
