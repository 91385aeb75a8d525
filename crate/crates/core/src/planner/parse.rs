use serde_json::{Map, Value};

use super::ActionDecision;

/// Result of interpreting one completion.
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Decision(ActionDecision),
    ParseFailure(String),
}

const FENCE_TAGS: [&str; 2] = ["json", "action"];

/// Bodies of ```json / ```action fenced blocks, in order.
fn action_fences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let tag = after[..line_end].trim();
        let body_start = (line_end + 1).min(after.len());
        let Some(close) = after[body_start..].find("```") else { break };
        if FENCE_TAGS.contains(&tag) {
            out.push(&after[body_start..body_start + close]);
        }
        rest = &after[body_start + close + 3..];
    }
    out
}

fn decision_from(obj: &Map<String, Value>) -> Parsed {
    let callee = match obj.get("tool_name") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_owned(),
        other => return Parsed::ParseFailure(format!("tool_name must be a non-empty string, got {}", display(other))),
    };
    let arguments = match obj.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(other) => return Parsed::ParseFailure(format!("arguments must be an object, got {other}")),
    };
    Parsed::Decision(ActionDecision::Call { callee, arguments })
}

fn display(v: Option<&Value>) -> String {
    v.map(Value::to_string).unwrap_or_else(|| "nothing".into())
}

/// Interprets model text as the next action.
///
/// Malformed JSON inside an explicit ```json or ```action fence is a parse
/// failure. Otherwise the first JSON object (by start position) carrying a
/// `tool_name` key becomes a call; text without one is the final answer.
pub fn parse_action(text: &str) -> Parsed {
    for body in action_fences(text) {
        if let Err(e) = serde_json::from_str::<Value>(body.trim()) {
            return Parsed::ParseFailure(format!("malformed action block: {e}"));
        }
    }
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            if obj.contains_key("tool_name") {
                return decision_from(&obj);
            }
        }
    }
    Parsed::Decision(ActionDecision::Final { answer: Value::String(text.trim().to_owned()) })
}
