use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{render_prompt, ChatMessage, ChatModel};
use crate::error::ModelError;

/// One scripted reply. Exactly one of `match` (substring) or `regex` is set.
///
/// Regex replies may reference capture groups (`$1`, `${name}`); write `$$` for
/// a literal dollar sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ScriptRule {
    pub fn contains(needle: &str, reply: &str) -> Self {
        Self { contains: Some(needle.to_owned()), regex: None, reply: reply.to_owned(), max_uses: None }
    }

    pub fn regex(pattern: &str, reply: &str) -> Self {
        Self { contains: None, regex: Some(pattern.to_owned()), reply: reply.to_owned(), max_uses: None }
    }

    pub fn uses(mut self, max_uses: u32) -> Self {
        self.max_uses = Some(max_uses);
        self
    }
}

/// Rules file contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptSpec {
    pub rules: Vec<ScriptRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<String>,
    /// Artificial latency added to every completion.
    #[serde(default)]
    pub delay_ms: u64,
}

impl ScriptSpec {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidBinding(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ModelError::InvalidBinding(format!("{}: {e}", path.display())))
    }
}

enum Matcher {
    Contains(String),
    Regex(Regex),
}

struct CompiledRule {
    matcher: Matcher,
    reply: String,
    max_uses: Option<u32>,
}

/// Deterministic model: first matching, unexhausted rule wins.
pub struct ScriptedModel {
    rules: Vec<CompiledRule>,
    default_reply: Option<String>,
    delay: Duration,
    uses: Mutex<HashMap<(String, usize), u32>>,
}

impl ScriptedModel {
    pub fn new(spec: ScriptSpec) -> Result<Self, ModelError> {
        let rules = spec
            .rules
            .into_iter()
            .enumerate()
            .map(|(i, rule)| {
                let matcher = match (rule.contains, rule.regex) {
                    (Some(needle), None) => Matcher::Contains(needle),
                    (None, Some(pattern)) => Matcher::Regex(
                        Regex::new(&pattern).map_err(|e| ModelError::InvalidBinding(format!("rule {i}: {e}")))?,
                    ),
                    _ => {
                        return Err(ModelError::InvalidBinding(format!(
                            "rule {i} must set exactly one of `match` or `regex`"
                        )))
                    }
                };
                Ok(CompiledRule { matcher, reply: rule.reply, max_uses: rule.max_uses })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            rules,
            default_reply: spec.default_reply,
            delay: Duration::from_millis(spec.delay_ms),
            uses: Mutex::new(HashMap::new()),
        })
    }

    /// Completes against an already-rendered prompt.
    pub fn reply_for(&self, prompt: &str, session: &str) -> Result<String, ModelError> {
        let mut uses = self.uses.lock();
        for (idx, rule) in self.rules.iter().enumerate() {
            let reply = match &rule.matcher {
                Matcher::Contains(needle) => prompt.contains(needle.as_str()).then(|| rule.reply.clone()),
                Matcher::Regex(re) => re.captures(prompt).map(|caps| {
                    let mut out = String::new();
                    caps.expand(&rule.reply, &mut out);
                    out
                }),
            };
            let Some(reply) = reply else { continue };
            let key = (session.to_owned(), idx);
            let used = uses.get(&key).copied().unwrap_or(0);
            if rule.max_uses.is_some_and(|max| used >= max) {
                continue;
            }
            uses.insert(key, used + 1);
            return Ok(reply);
        }
        self.default_reply.clone().ok_or(ModelError::NoRuleMatched)
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&self, messages: &[ChatMessage], session: &str) -> Result<String, ModelError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        self.reply_for(&render_prompt(messages), session)
    }
}
