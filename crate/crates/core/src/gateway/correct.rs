//! Near-miss correction for model-emitted tool calls.
//!
//! Models misspell tool names and argument keys often enough that rejecting
//! outright wastes turns. The rules here are deliberately narrow so a wrong
//! tool is never silently substituted:
//!
//! * a name is corrected only when exactly one registered tool is within
//!   edit distance 2;
//! * an argument key is renamed only when exactly one key is unknown and
//!   exactly one required parameter is unbound — a forced pairing.
//!
//! Anything else is rejected with a reason the model can read.

use super::{ToolCall, ToolSpec};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorrectionError {
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("no registered tool within edit distance 2 of '{0}'")]
    UnknownTool(String),
    #[error("tool name '{name}' is ambiguous between {candidates:?}")]
    AmbiguousTool { name: String, candidates: Vec<String> },
    #[error("arguments for '{tool}' could not be reconciled: {detail}")]
    BadArguments { tool: String, detail: String },
}

/// Levenshtein distance over Unicode scalar values (single-row DP).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut prev_diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            let next = (prev_diag + cost).min(row[j] + 1).min(row[j + 1] + 1);
            prev_diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Validates `call` against the registry, applying the name and argument
/// corrections described in the module docs. A call that is already valid is
/// returned unchanged; `raw` is always preserved.
pub fn correct_tool_call(
    call: &ToolCall,
    registry: &[ToolSpec],
) -> Result<ToolCall, CorrectionError> {
    if registry.is_empty() {
        return Err(CorrectionError::EmptyRegistry);
    }
    let spec = match registry.iter().find(|s| s.name == call.tool_name) {
        Some(spec) => spec,
        None => {
            let candidates: Vec<&ToolSpec> = registry
                .iter()
                .filter(|s| levenshtein(&s.name, &call.tool_name) <= 2)
                .collect();
            match candidates.as_slice() {
                [] => return Err(CorrectionError::UnknownTool(call.tool_name.clone())),
                [only] => *only,
                many => {
                    return Err(CorrectionError::AmbiguousTool {
                        name: call.tool_name.clone(),
                        candidates: many.iter().map(|s| s.name.clone()).collect(),
                    })
                }
            }
        }
    };

    let mut arguments = call.arguments.clone();
    let known = |key: &str| spec.params.iter().any(|p| p.name == key);
    let unknown: Vec<String> = arguments
        .keys()
        .filter(|k| !known(k))
        .cloned()
        .collect();
    let unbound_required: Vec<&str> = spec
        .params
        .iter()
        .filter(|p| p.required && !arguments.contains_key(&p.name))
        .map(|p| p.name.as_str())
        .collect();
    if let ([stray], [target]) = (unknown.as_slice(), unbound_required.as_slice()) {
        let value = arguments.remove(stray).expect("stray key was just listed");
        arguments.insert(target.to_string(), value);
    }

    let still_unknown: Vec<&String> = arguments.keys().filter(|k| !known(k)).collect();
    if !still_unknown.is_empty() {
        return Err(CorrectionError::BadArguments {
            tool: spec.name.clone(),
            detail: format!("unknown arguments {still_unknown:?}"),
        });
    }
    let still_missing: Vec<&str> = spec
        .params
        .iter()
        .filter(|p| p.required && !arguments.contains_key(&p.name))
        .map(|p| p.name.as_str())
        .collect();
    if !still_missing.is_empty() {
        return Err(CorrectionError::BadArguments {
            tool: spec.name.clone(),
            detail: format!("missing required arguments {still_missing:?}"),
        });
    }

    Ok(ToolCall {
        tool_name: spec.name.clone(),
        arguments,
        raw: call.raw.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::standard_registry;
    use super::*;

    fn registry() -> Vec<ToolSpec> {
        standard_registry()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(levenshtein("", ""), 0);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        // Transposition costs 2 under plain Levenshtein.
        assert_eq!(levenshtein("google_serach", "google_search"), 2);
    }

    #[test]
    fn valid_calls_pass_through_unchanged() {
        let call = ToolCall::new("google_search").arg("query", "capital of France");
        let fixed = correct_tool_call(&call, &registry()).unwrap();
        assert_eq!(fixed, call);
    }

    #[test]
    fn misspelled_name_with_unique_match_is_corrected() {
        let call = ToolCall::new("google_serach").arg("query", "q");
        let fixed = correct_tool_call(&call, &registry()).unwrap();
        assert_eq!(fixed.tool_name, "google_search");
        assert_eq!(fixed.arguments, call.arguments);
    }

    #[test]
    fn raw_form_survives_correction() {
        let mut call = ToolCall::new("google_serach").arg("query", "q");
        call.raw = Some("<tool_call>…</tool_call>".into());
        let fixed = correct_tool_call(&call, &registry()).unwrap();
        assert_eq!(fixed.raw, call.raw);
    }

    #[test]
    fn distant_names_are_rejected() {
        let call = ToolCall::new("wikipedia_lookup").arg("query", "q");
        assert_eq!(
            correct_tool_call(&call, &registry()),
            Err(CorrectionError::UnknownTool("wikipedia_lookup".into()))
        );
    }

    #[test]
    fn ambiguous_names_are_rejected_not_guessed() {
        let reg = vec![
            ToolSpec::new("fetch_a", "a").param(
                "x",
                super::super::ParamKind::String,
                false,
                "",
            ),
            ToolSpec::new("fetch_b", "b"),
        ];
        let call = ToolCall::new("fetch_c");
        match correct_tool_call(&call, &reg) {
            Err(CorrectionError::AmbiguousTool { candidates, .. }) => {
                assert_eq!(candidates, vec!["fetch_a".to_string(), "fetch_b".into()]);
            }
            other => panic!("expected ambiguity, got {other:?}"),
        }
    }

    #[test]
    fn single_stray_key_is_renamed_onto_single_missing_required() {
        let call = ToolCall::new("google_search").arg("q", "capital of France");
        let fixed = correct_tool_call(&call, &registry()).unwrap();
        assert_eq!(fixed.arguments.get("query").unwrap(), "capital of France");
        assert!(!fixed.arguments.contains_key("q"));
    }

    #[test]
    fn two_stray_keys_cannot_be_paired() {
        let call = ToolCall::new("run_command")
            .arg("sandbox", "sbx-1")
            .arg("cmd", "ls");
        assert!(matches!(
            correct_tool_call(&call, &registry()),
            Err(CorrectionError::BadArguments { .. })
        ));
    }

    #[test]
    fn missing_required_without_stray_is_rejected() {
        let call = ToolCall::new("google_search");
        assert!(matches!(
            correct_tool_call(&call, &registry()),
            Err(CorrectionError::BadArguments { .. })
        ));
    }

    #[test]
    fn empty_registry_is_an_error() {
        let call = ToolCall::new("google_search");
        assert_eq!(
            correct_tool_call(&call, &[]),
            Err(CorrectionError::EmptyRegistry)
        );
    }

    #[test]
    fn correction_is_idempotent() {
        let call = ToolCall::new("google_serach").arg("q", "x");
        let once = correct_tool_call(&call, &registry()).unwrap();
        let twice = correct_tool_call(&once, &registry()).unwrap();
        assert_eq!(once, twice);
    }
}
