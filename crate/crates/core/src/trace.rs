//! Trajectory files: JSON Lines, one object per line.
//!
//! Step lines carry exactly `{episode, index, thought, action, observation}`
//! — that shape is frozen; downstream tooling depends on it. Auxiliary lines
//! (verifier verdicts, the run summary, evidence chains) are distinguished
//! by a `record` field, which step lines never have.

use serde::{Deserialize, Serialize};

use crate::agent::{AnswerSource, RunStatus, TaskRun};
use crate::context::{Action, TrajectoryLog};
use crate::verifier::{Claim, Decision, EvidenceChain};

/// One step line. `observation` is `null` for steps without one, so every
/// line carries all five fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u32,
    pub index: usize,
    pub thought: String,
    pub action: Action,
    pub observation: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct VerdictRecord<'a> {
    record: &'static str,
    episode: u32,
    step_index: usize,
    decision: Decision,
    critique: &'a str,
    alternatives: usize,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRecord<'a> {
    record: &'static str,
    answer: &'a str,
    source: AnswerSource,
    episode: u32,
    total_steps: usize,
    episodes: usize,
    statuses: Vec<RunStatus>,
}

#[derive(Debug, Clone, Serialize)]
struct ChainRecord<'a> {
    record: &'static str,
    completeness: f64,
    claims: &'a [Claim],
    gaps: &'a [String],
}

/// Step records for one episode log, in step order.
pub fn log_records(log: &TrajectoryLog) -> Vec<StepRecord> {
    log.steps
        .iter()
        .map(|step| StepRecord {
            episode: log.episode,
            index: step.index,
            thought: step.thought.clone(),
            action: step.action.clone(),
            observation: step.observation.clone(),
        })
        .collect()
}

/// Serializes a finished task: every episode's steps in order, then verdict
/// lines, then one summary line. Deterministic byte for byte.
pub fn task_to_jsonl(run: &TaskRun) -> String {
    let mut out = String::new();
    for state in &run.episodes {
        for record in log_records(&state.log) {
            out.push_str(&serde_json::to_string(&record).expect("step record serializes"));
            out.push('\n');
        }
    }
    for state in &run.episodes {
        for event in &state.verdicts {
            let record = VerdictRecord {
                record: "verdict",
                episode: state.episode,
                step_index: event.step_index,
                decision: event.verdict.decision,
                critique: &event.verdict.critique,
                alternatives: event.verdict.alternatives.len(),
            };
            out.push_str(&serde_json::to_string(&record).expect("verdict record serializes"));
            out.push('\n');
        }
    }
    let summary = SummaryRecord {
        record: "summary",
        answer: &run.answer.text,
        source: run.answer.source,
        episode: run.answer.episode,
        total_steps: run.answer.total_steps,
        episodes: run.episodes.len(),
        statuses: run.episodes.iter().map(|s| s.status).collect(),
    };
    out.push_str(&serde_json::to_string(&summary).expect("summary record serializes"));
    out.push('\n');
    out
}

/// One evidence-chain line, appended after answer-level verification.
pub fn chain_to_jsonl(chain: &EvidenceChain) -> String {
    let record = ChainRecord {
        record: "chain",
        completeness: chain.completeness,
        claims: &chain.claims,
        gaps: &chain.gaps,
    };
    let mut line = serde_json::to_string(&record).expect("chain record serializes");
    line.push('\n');
    line
}

/// Parses the step lines out of a trajectory file, skipping `record`-tagged
/// auxiliary lines.
pub fn parse_step_records(text: &str) -> Result<Vec<StepRecord>, serde_json::Error> {
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)?;
        if value.get("record").is_some() {
            continue;
        }
        records.push(serde_json::from_value(value)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentLoop, EpisodeConfig};
    use crate::backend::{render_action, ScriptedBackend};
    use crate::context::{ContextPolicy, TokenCounter};
    use crate::gateway::test_support::{mock_gateway, sample_docs};
    use crate::gateway::ToolCall;

    fn scripted_run() -> (String, String) {
        let gateway = mock_gateway(sample_docs(), &[]);
        let make = || {
            ScriptedBackend::new([
                format!(
                    "search first {}",
                    render_action(&Action::ToolCall(
                        ToolCall::new("google_search").arg("query", "capital France"),
                    ))
                ),
                "<final_answer>Paris</final_answer>".to_string(),
            ])
        };
        let policy = ContextPolicy::new(5, 64, TokenCounter::Words).unwrap();
        let config = EpisodeConfig::new(5, 1, policy).unwrap();
        let first = {
            let backend = make();
            let agent = AgentLoop::new(config.clone(), &backend, &gateway);
            task_to_jsonl(&agent.run_task_full("capital of France?"))
        };
        let second = {
            let backend = make();
            let agent = AgentLoop::new(config, &backend, &gateway);
            task_to_jsonl(&agent.run_task_full("capital of France?"))
        };
        (first, second)
    }

    #[test]
    fn identical_runs_serialize_identically() {
        let (a, b) = scripted_run();
        assert_eq!(a, b);
        assert!(!a.contains("latency"));
    }

    #[test]
    fn step_lines_carry_the_frozen_field_set() {
        let (jsonl, _) = scripted_run();
        let first_line = jsonl.lines().next().unwrap();
        let value: serde_json::Value = serde_json::from_str(first_line).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["action", "episode", "index", "observation", "thought"]
        );
        // Final-answer steps still carry all five fields, observation null.
        let second_line = jsonl.lines().nth(1).unwrap();
        assert!(second_line.contains("\"observation\":null"));
    }

    #[test]
    fn summary_line_closes_the_file() {
        let (jsonl, _) = scripted_run();
        let last = jsonl.lines().last().unwrap();
        let value: serde_json::Value = serde_json::from_str(last).unwrap();
        assert_eq!(value["record"], "summary");
        assert_eq!(value["answer"], "Paris");
        assert_eq!(value["total_steps"], 2);
        assert_eq!(value["statuses"][0], "answered");
    }

    #[test]
    fn step_records_round_trip_through_jsonl() {
        let (jsonl, _) = scripted_run();
        let records = parse_step_records(&jsonl).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].index, 1);
        assert!(matches!(records[0].action, Action::ToolCall(_)));
        assert!(records[0].observation.is_some());
        assert_eq!(
            records[1].action,
            Action::FinalAnswer {
                text: "Paris".into()
            }
        );
        let reserialized = serde_json::to_string(&records[0]).unwrap();
        let reparsed: StepRecord = serde_json::from_str(&reserialized).unwrap();
        assert_eq!(reparsed, records[0]);
    }

    #[test]
    fn chain_lines_are_tagged() {
        let chain = EvidenceChain::failed("nothing to audit");
        let line = chain_to_jsonl(&chain);
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(value["record"], "chain");
        assert_eq!(value["completeness"], 0.0);
    }
}
