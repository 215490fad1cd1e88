//! Domain blocklist applied to every outbound URL.
//!
//! A single suffix-match policy covers search results, page scraping, and
//! sandbox downloads: a URL is denied when its host equals a listed domain
//! or ends with `"." + domain`. URLs that cannot be parsed are denied too —
//! the list is a containment control, so it fails closed.

use std::collections::BTreeSet;
use std::io::{self, BufRead};
use std::path::Path;
use std::sync::RwLock;

use url::Url;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockDecision {
    Allow,
    Deny(DenyCause),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyCause {
    /// Host matched this listed domain.
    Domain(String),
    /// The URL did not parse; the payload is the parser's message.
    Unparseable(String),
}

impl DenyCause {
    pub fn describe(&self) -> String {
        match self {
            DenyCause::Domain(d) => format!("domain '{d}' is blocklisted"),
            DenyCause::Unparseable(e) => format!("URL could not be parsed ({e}); denying"),
        }
    }
}

/// Append-only set of blocked domains, shareable across threads.
#[derive(Debug, Default)]
pub struct Blocklist {
    domains: RwLock<BTreeSet<String>>,
}

impl Blocklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_domains(domains: impl IntoIterator<Item = String>) -> Self {
        let set = domains
            .into_iter()
            .filter_map(|d| normalize_domain(&d))
            .collect();
        Blocklist {
            domains: RwLock::new(set),
        }
    }

    /// Loads a newline-delimited domain file. Blank lines and `#` comments
    /// are skipped.
    pub fn load(path: &Path) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut domains = Vec::new();
        for line in io::BufReader::new(file).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            domains.push(line.to_string());
        }
        Ok(Self::from_domains(domains))
    }

    /// Adds a domain. Removal is deliberately not offered.
    pub fn add(&self, domain: &str) {
        if let Some(d) = normalize_domain(domain) {
            self.domains.write().expect("blocklist poisoned").insert(d);
        }
    }

    pub fn domains(&self) -> Vec<String> {
        self.domains
            .read()
            .expect("blocklist poisoned")
            .iter()
            .cloned()
            .collect()
    }

    pub fn check(&self, raw_url: &str) -> BlockDecision {
        let url = match Url::parse(raw_url) {
            Ok(u) => u,
            Err(e) => return BlockDecision::Deny(DenyCause::Unparseable(e.to_string())),
        };
        let Some(host) = url.host_str() else {
            return BlockDecision::Deny(DenyCause::Unparseable("URL has no host".into()));
        };
        let host = host.to_ascii_lowercase();
        let domains = self.domains.read().expect("blocklist poisoned");
        for domain in domains.iter() {
            if host == *domain || host.ends_with(&format!(".{domain}")) {
                return BlockDecision::Deny(DenyCause::Domain(domain.clone()));
            }
        }
        BlockDecision::Allow
    }
}

fn normalize_domain(domain: &str) -> Option<String> {
    let d = domain.trim().trim_end_matches('.').to_ascii_lowercase();
    if d.is_empty() {
        None
    } else {
        Some(d)
    }
}
