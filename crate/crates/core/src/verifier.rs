//! Step-level and answer-level verification.
//!
//! The *local* verifier reviews proposed tool calls before they execute: a
//! second model judges the step and either approves it, supplies a concrete
//! replacement call, or attaches a critique. Audit failures approve by
//! default — verification must never be able to stall the loop.
//!
//! The *global* verifier works on finished answers. An auditor decomposes an
//! answer into claims and maps each to the trajectory steps supporting it;
//! the supported fraction is the chain's completeness. [`global_verify`]
//! spends a compute budget producing extra candidate answers until one
//! clears a completeness threshold, then returns the best chain seen.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{AgentLoop, AnswerSource, FinalAnswer, NO_ANSWER_SENTINEL};
use crate::backend::{ChatRequest, ModelBackend, SamplingParams};
use crate::context::{Action, EffectiveContext, TokenCounter, TrajectoryLog};
use crate::gateway::ToolCall;

const LOCAL_VERIFIER_TEMPLATE: &str = include_str!("../templates/local_verifier_v1.txt");
const CHAIN_AUDITOR_TEMPLATE: &str = include_str!("../templates/chain_auditor_v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum VerifierError {
    #[error("compute budget multiplier must be >= 1")]
    ZeroBudget,
    #[error("completeness threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("verifier cadence must be >= 1")]
    ZeroCadence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Revise,
}

/// Ruling on one proposed step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepVerdict {
    pub decision: Decision,
    /// The reviewer's reasoning; empty for silent approvals.
    pub critique: String,
    /// Replacement calls, best first. Empty for approvals and for critiques
    /// that name no concrete alternative.
    pub alternatives: Vec<ToolCall>,
}

impl StepVerdict {
    fn approve(critique: impl Into<String>) -> Self {
        StepVerdict {
            decision: Decision::Approve,
            critique: critique.into(),
            alternatives: Vec::new(),
        }
    }
}

/// Reviews every `every_n`-th proposed tool call with a second model.
pub struct LocalVerifier<'a> {
    auditor: &'a dyn ModelBackend,
    every_n: usize,
    sampling: SamplingParams,
}

impl<'a> LocalVerifier<'a> {
    /// Reviews every proposed tool call.
    pub fn new(auditor: &'a dyn ModelBackend) -> Self {
        LocalVerifier {
            auditor,
            every_n: 1,
            sampling: SamplingParams::default(),
        }
    }

    pub fn with_cadence(auditor: &'a dyn ModelBackend, every_n: usize) -> Result<Self, VerifierError> {
        if every_n == 0 {
            return Err(VerifierError::ZeroCadence);
        }
        Ok(LocalVerifier {
            auditor,
            every_n,
            sampling: SamplingParams::default(),
        })
    }

    pub fn cadence(&self) -> usize {
        self.every_n
    }

    /// Asks the auditor to judge one proposed step.
    ///
    /// The auditor replies in the ordinary action protocol: a final answer
    /// of "approve", a concrete replacement tool call, or a critique. Any
    /// other outcome — malformed output, backend failure — approves the
    /// original step by default.
    pub fn review(
        &self,
        ctx: &EffectiveContext,
        thought: &str,
        proposed: &ToolCall,
    ) -> StepVerdict {
        let rendered = LOCAL_VERIFIER_TEMPLATE
            .replace("{query}", &ctx.query)
            .replace("{history}", &render_history(ctx))
            .replace("{thought}", thought)
            .replace(
                "{action}",
                &crate::backend::render_action(&Action::ToolCall(proposed.clone())),
            );
        let request = ChatRequest {
            token_count: TokenCounter::Bytes4.count(&rendered),
            rendered,
            tools: Value::Null,
            sampling: self.sampling.clone(),
        };
        match self.auditor.complete(&request) {
            Ok(response) => match response.action {
                Action::FinalAnswer { text } => {
                    if text.trim().eq_ignore_ascii_case("approve") {
                        StepVerdict::approve(response.thought)
                    } else {
                        StepVerdict {
                            decision: Decision::Revise,
                            critique: text,
                            alternatives: Vec::new(),
                        }
                    }
                }
                Action::ToolCall(alt) => StepVerdict {
                    decision: Decision::Revise,
                    critique: response.thought,
                    alternatives: vec![alt],
                },
                Action::Malformed { .. } => {
                    tracing::warn!("step reviewer output was malformed; approving by default");
                    StepVerdict::approve("")
                }
            },
            Err(err) => {
                tracing::warn!(%err, "step reviewer unavailable; approving by default");
                StepVerdict::approve("")
            }
        }
    }
}

fn render_history(ctx: &EffectiveContext) -> String {
    if ctx.entries.is_empty() {
        return "(no steps yet)".to_string();
    }
    let mut out = String::new();
    for entry in &ctx.entries {
        out.push_str(&format!(
            "Step {}: {}\n",
            entry.index,
            crate::backend::render_action(&entry.action)
        ));
        if let Some(obs) = entry.observation.rendered() {
            out.push_str(&format!("  Observation: {obs}\n"));
        }
    }
    out
}

/// One factual claim extracted from an answer, with the 1-based indices of
/// the trajectory steps that support it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    #[serde(default)]
    pub support: Vec<usize>,
}

/// The audited link between an answer and its trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceChain {
    pub claims: Vec<Claim>,
    /// Fraction of claims with at least one supporting step, in `[0, 1]`.
    pub completeness: f64,
    /// Human-readable descriptions of what is unsupported.
    pub gaps: Vec<String>,
}

impl EvidenceChain {
    /// Builds a chain from raw claims, dropping support indices that do not
    /// exist in `log` and computing completeness locally — the auditor model
    /// is never trusted with arithmetic.
    pub fn from_claims(mut claims: Vec<Claim>, log: &TrajectoryLog) -> Self {
        let len = log.steps.len();
        for claim in &mut claims {
            claim.support.retain(|&i| i >= 1 && i <= len);
        }
        if claims.is_empty() {
            return Self::failed("auditor extracted no claims");
        }
        let supported = claims.iter().filter(|c| !c.support.is_empty()).count();
        let completeness = supported as f64 / claims.len() as f64;
        let gaps = claims
            .iter()
            .filter(|c| c.support.is_empty())
            .map(|c| format!("unsupported claim: {}", c.text))
            .collect();
        EvidenceChain {
            claims,
            completeness,
            gaps,
        }
    }

    /// Chain representing a failed audit: zero completeness, one gap.
    pub fn failed(reason: impl Into<String>) -> Self {
        EvidenceChain {
            claims: Vec::new(),
            completeness: 0.0,
            gaps: vec![reason.into()],
        }
    }
}

/// Anything that can audit an answer against its trajectory.
pub trait ChainAuditor: Send + Sync {
    fn audit(&self, log: &TrajectoryLog, answer: &str) -> EvidenceChain;
}

/// Model-backed auditor: prompts for a claim/support decomposition and
/// grades it locally.
pub struct ModelChainAuditor<'a> {
    backend: &'a dyn ModelBackend,
    sampling: SamplingParams,
}

impl<'a> ModelChainAuditor<'a> {
    pub fn new(backend: &'a dyn ModelBackend) -> Self {
        ModelChainAuditor {
            backend,
            sampling: SamplingParams::default(),
        }
    }
}

#[derive(Deserialize)]
struct ClaimSheet {
    claims: Vec<Claim>,
}

impl ChainAuditor for ModelChainAuditor<'_> {
    fn audit(&self, log: &TrajectoryLog, answer: &str) -> EvidenceChain {
        if answer.trim().is_empty() {
            return EvidenceChain::failed("empty answer");
        }
        let mut steps = String::new();
        for step in &log.steps {
            steps.push_str(&format!(
                "Step {}:\n  Action: {}\n",
                step.index,
                crate::backend::render_action(&step.action)
            ));
            if let Some(obs) = &step.observation {
                steps.push_str(&format!("  Observation: {obs}\n"));
            }
        }
        let rendered = CHAIN_AUDITOR_TEMPLATE
            .replace("{query}", &log.query)
            .replace("{answer}", answer)
            .replace("{steps}", &steps);
        let request = ChatRequest {
            token_count: TokenCounter::Bytes4.count(&rendered),
            rendered,
            tools: Value::Null,
            sampling: self.sampling.clone(),
        };
        match self.backend.complete(&request) {
            Ok(response) => match response.action {
                Action::FinalAnswer { text } => {
                    match serde_json::from_str::<ClaimSheet>(text.trim()) {
                        Ok(sheet) => EvidenceChain::from_claims(sheet.claims, log),
                        Err(err) => {
                            tracing::warn!(%err, "auditor claims did not parse");
                            EvidenceChain::failed(format!("audit output unusable: {err}"))
                        }
                    }
                }
                other => {
                    tracing::warn!(?other, "auditor did not return a claim sheet");
                    EvidenceChain::failed("audit output unusable: no claim sheet")
                }
            },
            Err(err) => {
                tracing::warn!(%err, "auditor backend failed");
                EvidenceChain::failed(format!("audit failed: {err}"))
            }
        }
    }
}

/// Audits `answer` against `log` using a model backend.
pub fn audit_chain(
    log: &TrajectoryLog,
    answer: &str,
    backend: &dyn ModelBackend,
) -> EvidenceChain {
    ModelChainAuditor::new(backend).audit(log, answer)
}

/// Extra test-time compute allotted to answer verification, expressed as a
/// multiple of a plain single-run budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeBudget {
    pub multiplier: u32,
    /// Cap on candidate rollouts `global_verify` may request.
    pub max_candidates: u32,
}

impl ComputeBudget {
    pub fn from_multiplier(multiplier: u32) -> Result<Self, VerifierError> {
        if multiplier == 0 {
            return Err(VerifierError::ZeroBudget);
        }
        Ok(ComputeBudget {
            multiplier,
            max_candidates: multiplier,
        })
    }
}

impl Default for ComputeBudget {
    /// The production setting: sixteen-fold test-time compute.
    fn default() -> Self {
        ComputeBudget::from_multiplier(16).expect("16 >= 1")
    }
}

/// How replacement candidates are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerMode {
    /// Fresh independent attempts at the original query.
    Resample,
    /// Attempts steered by the best chain's open gaps.
    Complete,
}

/// A finished answer paired with the trajectory that produced it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub answer: FinalAnswer,
    pub log: TrajectoryLog,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("candidate runner failed: {0}")]
    Failed(String),
}

/// Produces one additional candidate on demand.
pub trait CandidateRunner: Send + Sync {
    /// `gaps` carries the best-so-far chain's open gaps (empty when there is
    /// no usable chain yet); `Complete` mode runners steer by them.
    fn produce(
        &self,
        query: &str,
        mode: RunnerMode,
        gaps: &[String],
    ) -> Result<Candidate, RunnerError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalVerifyConfig {
    /// A candidate at or above this completeness stops the search.
    pub threshold: f64,
    pub budget: ComputeBudget,
    pub mode: RunnerMode,
}

impl GlobalVerifyConfig {
    pub fn new(
        threshold: f64,
        budget: ComputeBudget,
        mode: RunnerMode,
    ) -> Result<Self, VerifierError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(VerifierError::BadThreshold(threshold));
        }
        Ok(GlobalVerifyConfig {
            threshold,
            budget,
            mode,
        })
    }
}

impl Default for GlobalVerifyConfig {
    fn default() -> Self {
        GlobalVerifyConfig {
            threshold: 0.8,
            budget: ComputeBudget::default(),
            mode: RunnerMode::Resample,
        }
    }
}

/// Result of budgeted answer verification.
#[derive(Debug, Clone)]
pub struct GlobalVerdict {
    pub answer: FinalAnswer,
    /// Completeness of the selected candidate's chain.
    pub completeness: f64,
    /// Candidates audited in total (initial plus produced).
    pub candidates_considered: usize,
}

/// Audits the given candidates and, while the best completeness is below the
/// threshold and budget remains, asks the runner for more. Returns the
/// best-chained answer.
///
/// Selection is deterministic: highest completeness, then lexicographically
/// smallest answer text, then earliest arrival. With no candidates at all it
/// returns the no-answer sentinel.
pub fn global_verify(
    query: &str,
    candidates: Vec<Candidate>,
    config: &GlobalVerifyConfig,
    runner: &dyn CandidateRunner,
    auditor: &dyn ChainAuditor,
) -> GlobalVerdict {
    let mut scored: Vec<(Candidate, EvidenceChain)> = candidates
        .into_iter()
        .map(|c| {
            let chain = auditor.audit(&c.log, &c.answer.text);
            (c, chain)
        })
        .collect();

    let mut produced = 0;
    loop {
        let best_now = select_best(&scored);
        let best_score = best_now.map(|i| scored[i].1.completeness).unwrap_or(0.0);
        if best_score >= config.threshold || produced >= config.budget.max_candidates {
            break;
        }
        // Runner failures still consume budget; a dead runner must not spin.
        produced += 1;
        let gaps: Vec<String> = best_now
            .map(|i| scored[i].1.gaps.clone())
            .unwrap_or_default();
        match runner.produce(query, config.mode, &gaps) {
            Ok(candidate) => {
                let chain = auditor.audit(&candidate.log, &candidate.answer.text);
                tracing::debug!(
                    completeness = chain.completeness,
                    produced,
                    "audited fresh candidate"
                );
                scored.push((candidate, chain));
            }
            Err(err) => tracing::warn!(%err, "candidate runner failed"),
        }
    }

    match select_best(&scored) {
        Some(i) => GlobalVerdict {
            answer: scored[i].0.answer.clone(),
            completeness: scored[i].1.completeness,
            candidates_considered: scored.len(),
        },
        None => GlobalVerdict {
            answer: FinalAnswer {
                text: NO_ANSWER_SENTINEL.to_string(),
                source: AnswerSource::FallbackExtracted,
                episode: 1,
                total_steps: 0,
            },
            completeness: 0.0,
            candidates_considered: 0,
        },
    }
}

fn select_best(scored: &[(Candidate, EvidenceChain)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (candidate, chain)) in scored.iter().enumerate() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let (b_chain, b_text) = (&scored[b].1, &scored[b].0.answer.text);
        if chain.completeness > b_chain.completeness
            || (chain.completeness == b_chain.completeness && candidate.answer.text < *b_text)
        {
            best = Some(i);
        }
    }
    best
}

/// [`CandidateRunner`] that reruns the full agent loop per candidate. In
/// `Complete` mode the best chain's gaps are appended to the query so the
/// fresh attempt targets them.
pub struct AgentCandidateRunner<'a> {
    pub agent: AgentLoop<'a>,
}

impl CandidateRunner for AgentCandidateRunner<'_> {
    fn produce(
        &self,
        query: &str,
        mode: RunnerMode,
        gaps: &[String],
    ) -> Result<Candidate, RunnerError> {
        let effective_query = match mode {
            RunnerMode::Complete if !gaps.is_empty() => {
                let mut q = format!("{query}\n\nResolve these open gaps:\n");
                for gap in gaps {
                    q.push_str(&format!("- {gap}\n"));
                }
                q
            }
            _ => query.to_string(),
        };
        let run = self.agent.run_task_full(&effective_query);
        let idx = (run.answer.episode as usize)
            .saturating_sub(1)
            .min(run.episodes.len().saturating_sub(1));
        let log = run
            .episodes
            .get(idx)
            .map(|s| s.log.clone())
            .unwrap_or_else(|| TrajectoryLog::new(1, query));
        Ok(Candidate {
            answer: run.answer,
            log,
        })
    }
}

/// Lazily compiled matcher for "approve"-style verdicts in free text; kept
/// for diagnostics when operators eyeball raw reviewer output.
static APPROVE_WORD: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"(?i)^\s*approve[.!]?\s*$").expect("static regex"));

/// True when free text is a bare approval.
pub fn is_bare_approval(text: &str) -> bool {
    APPROVE_WORD.is_match(text)
}
