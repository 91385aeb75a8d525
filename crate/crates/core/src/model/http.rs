use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ChatMessage, ChatModel};
use crate::error::ModelError;

#[derive(Serialize)]
struct ChatCompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    stream: bool,
    #[serde(flatten)]
    params: &'a Map<String, Value>,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for any endpoint speaking the OpenAI chat-completions protocol.
pub struct HttpModel {
    base_url: String,
    model: String,
    timeout: Duration,
    auth_env: Option<String>,
    params: Map<String, Value>,
    // built lazily: the blocking client must not be constructed on an async worker
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

impl HttpModel {
    pub fn new(
        base_url: String,
        model: String,
        timeout_ms: u64,
        auth_env: Option<String>,
        params: Map<String, Value>,
    ) -> Self {
        Self {
            base_url,
            model,
            timeout: Duration::from_millis(timeout_ms),
            auth_env,
            params,
            client: OnceLock::new(),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, ModelError> {
        self.client
            .get_or_init(|| {
                reqwest::blocking::Client::builder()
                    .timeout(self.timeout)
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| ModelError::ModelUnavailable(e.clone()))
    }

    fn send_once(&self, client: &reqwest::blocking::Client, messages: &[ChatMessage]) -> Result<String, reqwest::Error> {
        let body = ChatCompletionRequest { model: &self.model, messages, stream: false, params: &self.params };
        let mut req = client.post(self.endpoint()).json(&body);
        if let Some(token) = self.auth_env.as_deref().and_then(|var| std::env::var(var).ok()) {
            req = req.bearer_auth(token);
        }
        let resp = req.send()?.error_for_status()?;
        let parsed: ChatCompletionResponse = resp.json()?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

impl ChatModel for HttpModel {
    fn complete(&self, messages: &[ChatMessage], _session: &str) -> Result<String, ModelError> {
        let client = self.client()?;
        match self.send_once(client, messages) {
            Ok(text) => Ok(text),
            // one retry on timeout, then give up
            Err(e) if e.is_timeout() => self
                .send_once(client, messages)
                .map_err(|e| ModelError::ModelUnavailable(e.to_string())),
            Err(e) => Err(ModelError::ModelUnavailable(e.to_string())),
        }
    }
}
