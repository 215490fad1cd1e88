//! The text action protocol.
//!
//! Models signal actions with tagged blocks embedded in free-form text:
//! `<tool_call>{"name": ..., "arguments": {...}}</tool_call>` or
//! `<final_answer>...</final_answer>`. Everything outside the blocks is the
//! step's thought. When a response contains several blocks, the first one by
//! position is the action and the rest are dropped with a logged note.
//! Output with no well-formed block parses to [`Action::Malformed`], which
//! still costs the agent a turn.

use serde_json::Value;

use crate::context::Action;
use crate::gateway::ToolCall;

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const FINAL_OPEN: &str = "<final_answer>";
pub const FINAL_CLOSE: &str = "</final_answer>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Tool,
    Final,
}

#[derive(Debug)]
struct Block {
    start: usize,
    end: usize,
    inner: String,
    kind: BlockKind,
}

fn scan_blocks(text: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    for (kind, open, close) in [
        (BlockKind::Tool, TOOL_CALL_OPEN, TOOL_CALL_CLOSE),
        (BlockKind::Final, FINAL_OPEN, FINAL_CLOSE),
    ] {
        let mut from = 0;
        while let Some(rel) = text[from..].find(open) {
            let start = from + rel;
            let inner_start = start + open.len();
            let Some(rel_close) = text[inner_start..].find(close) else {
                break; // unterminated tag: not a block
            };
            let inner_end = inner_start + rel_close;
            blocks.push(Block {
                start,
                end: inner_end + close.len(),
                inner: text[inner_start..inner_end].to_string(),
                kind,
            });
            from = inner_end + close.len();
        }
    }
    blocks.sort_by_key(|b| b.start);
    blocks
}

/// Splits raw model output into `(thought, action)`.
///
/// The thought is the text outside every action block. Exactly one action is
/// returned per response; an unusable response becomes `Action::Malformed`
/// carrying the full raw text.
pub fn parse_action(text: &str) -> (String, Action) {
    let blocks = scan_blocks(text);
    let Some(primary) = blocks.first() else {
        tracing::debug!("model output contained no action block");
        return (
            text.trim().to_string(),
            Action::Malformed {
                raw: text.to_string(),
            },
        );
    };
    if blocks.len() > 1 {
        tracing::debug!(extra = blocks.len() - 1, "dropping extra action blocks");
    }

    // Thought = bytes not covered by any block (blocks may nest when a model
    // quotes one inside another; the union handles that).
    let mut thought = String::new();
    let mut cursor = 0;
    for b in &blocks {
        if b.start > cursor {
            thought.push_str(&text[cursor..b.start]);
        }
        cursor = cursor.max(b.end);
    }
    if cursor < text.len() {
        thought.push_str(&text[cursor..]);
    }
    let thought = thought.trim().to_string();

    let action = match primary.kind {
        BlockKind::Tool => match parse_tool_call(&primary.inner) {
            Ok(mut call) => {
                call.raw = Some(text[primary.start..primary.end].to_string());
                Action::ToolCall(call)
            }
            Err(reason) => {
                tracing::debug!(%reason, "tool call block did not parse");
                Action::Malformed {
                    raw: text.to_string(),
                }
            }
        },
        BlockKind::Final => {
            let answer = primary.inner.trim();
            if answer.is_empty() {
                tracing::debug!("final answer block was empty");
                Action::Malformed {
                    raw: text.to_string(),
                }
            } else {
                Action::FinalAnswer {
                    text: answer.to_string(),
                }
            }
        }
    };
    (thought, action)
}

fn parse_tool_call(inner: &str) -> Result<ToolCall, String> {
    let value: Value =
        serde_json::from_str(inner.trim()).map_err(|e| format!("invalid JSON: {e}"))?;
    let name = value
        .get("name")
        .and_then(Value::as_str)
        .filter(|n| !n.is_empty())
        .ok_or("missing or empty 'name'")?;
    let arguments = match value.get("arguments") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(map)) => map.clone(),
        Some(other) => return Err(format!("'arguments' must be an object, got {other}")),
    };
    Ok(ToolCall {
        tool_name: name.to_string(),
        arguments,
        raw: None,
    })
}

/// Renders an action back into protocol text. Together with [`parse_action`]
/// this round-trips: parsing the rendered form recovers the same action.
pub fn render_action(action: &Action) -> String {
    match action {
        Action::ToolCall(call) => {
            let body = serde_json::json!({
                "name": call.tool_name,
                "arguments": call.arguments,
            });
            format!("{TOOL_CALL_OPEN}{body}{TOOL_CALL_CLOSE}")
        }
        Action::FinalAnswer { text } => format!("{FINAL_OPEN}{text}{FINAL_CLOSE}"),
        Action::Malformed { .. } => "(unparseable output)".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tool_call_with_surrounding_thought() {
        let raw = r#"I should search first.
<tool_call>{"name": "google_search", "arguments": {"query": "capital of France"}}</tool_call>"#;
        let (thought, action) = parse_action(raw);
        assert_eq!(thought, "I should search first.");
        match action {
            Action::ToolCall(call) => {
                assert_eq!(call.tool_name, "google_search");
                assert_eq!(call.arguments["query"], "capital of France");
                assert!(call.raw.unwrap().starts_with(TOOL_CALL_OPEN));
            }
            other => panic!("expected tool call, got {other:?}"),
        }
    }

    #[test]
    fn final_answer_is_trimmed() {
        let (thought, action) = parse_action("Done.\n<final_answer>  Paris  </final_answer>");
        assert_eq!(thought, "Done.");
        assert_eq!(
            action,
            Action::FinalAnswer {
                text: "Paris".into()
            }
        );
    }

    #[test]
    fn first_block_wins_when_several_are_present() {
        let raw = r#"<tool_call>{"name": "google_search", "arguments": {"query": "a"}}</tool_call>
<final_answer>too eager</final_answer>"#;
        let (_, action) = parse_action(raw);
        assert!(matches!(action, Action::ToolCall(_)));

        let raw = r#"<final_answer>Paris</final_answer>
<tool_call>{"name": "google_search", "arguments": {"query": "b"}}</tool_call>"#;
        let (_, action) = parse_action(raw);
        assert_eq!(
            action,
            Action::FinalAnswer {
                text: "Paris".into()
            }
        );
    }

    #[test]
    fn garbage_becomes_malformed_with_raw_preserved() {
        for raw in [
            "just rambling, no action",
            "<tool_call>{not json}</tool_call>",
            "<tool_call>{\"arguments\": {}}</tool_call>",
            "<final_answer>   </final_answer>",
            "<tool_call>{\"name\": \"x\", \"arguments\": 3}</tool_call>",
            "<tool_call>unterminated",
        ] {
            let (_, action) = parse_action(raw);
            assert_eq!(
                action,
                Action::Malformed {
                    raw: raw.to_string()
                },
                "input: {raw}"
            );
        }
    }

    #[test]
    fn null_or_missing_arguments_mean_empty() {
        let (_, a) = parse_action(r#"<tool_call>{"name": "create_sandbox"}</tool_call>"#);
        match a {
            Action::ToolCall(c) => assert!(c.arguments.is_empty()),
            other => panic!("{other:?}"),
        }
        let (_, a) =
            parse_action(r#"<tool_call>{"name": "create_sandbox", "arguments": null}</tool_call>"#);
        assert!(matches!(a, Action::ToolCall(c) if c.arguments.is_empty()));
    }

    #[test]
    fn thought_collects_text_around_all_blocks() {
        let raw = "before <final_answer>X</final_answer> after";
        let (thought, _) = parse_action(raw);
        assert_eq!(thought, "before  after");
    }

    proptest! {
        /// Rendered tool calls parse back to the same name and arguments.
        #[test]
        fn tool_call_round_trip(
            name in "[a-z][a-z_]{0,15}",
            keys in proptest::collection::btree_set("[a-z]{1,8}", 0..4),
            val in "[a-zA-Z0-9 ]{0,20}",
        ) {
            let mut call = ToolCall::new(name);
            for k in keys {
                call.arguments.insert(k, serde_json::Value::String(val.clone()));
            }
            let rendered = render_action(&Action::ToolCall(call.clone()));
            let (thought, parsed) = parse_action(&rendered);
            prop_assert_eq!(thought, "");
            match parsed {
                Action::ToolCall(got) => {
                    prop_assert_eq!(got.tool_name, call.tool_name);
                    prop_assert_eq!(got.arguments, call.arguments);
                }
                other => prop_assert!(false, "expected tool call, got {:?}", other),
            }
        }

        /// Rendered final answers parse back verbatim.
        #[test]
        fn final_answer_round_trip(text in "[a-zA-Z0-9][a-zA-Z0-9 .,]{0,60}[a-zA-Z0-9]") {
            let action = Action::FinalAnswer { text: text.clone() };
            let (_, parsed) = parse_action(&render_action(&action));
            prop_assert_eq!(parsed, action);
        }

        /// parse_action never panics and always yields exactly one action.
        #[test]
        fn parse_is_total(raw in ".{0,200}") {
            let (_, action) = parse_action(&raw);
            // Malformed keeps the raw text for the log.
            if let Action::Malformed { raw: kept } = &action {
                prop_assert_eq!(kept, &raw);
            }
        }
    }
}
