use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::http::{token_from_env, JsonClient, RetryPolicy};

pub const LLM_TOKEN_ENV: &str = "DOMEX_LLM_TOKEN";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// What a request asks for. Real backends only see the messages; the mock
/// answers from this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RequestIntent {
    Domains {
        classes: Vec<String>,
        count: usize,
    },
    Prompts {
        class: String,
        domain: String,
        count: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub intent: RequestIntent,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Temperature used when the caller does not override it.
    fn default_temperature(&self) -> f64 {
        0.7
    }

    /// Returns the response text, or a transport-level error after retries.
    fn complete(&self, request: &ChatRequest) -> Result<String, String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub model: String,
    /// JSON Pointer to the response text.
    #[serde(default = "default_response_path")]
    pub response_path: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_response_path() -> String {
    "/choices/0/message/content".into()
}

fn default_timeout_secs() -> u64 {
    120
}

/// Chat-completion style HTTP backend.
#[derive(Debug)]
pub struct HttpChatBackend {
    id: String,
    config: HttpChatConfig,
    client: JsonClient,
}

impl HttpChatBackend {
    /// Builds the backend, reading the bearer token from `DOMEX_LLM_TOKEN`.
    pub fn new(config: HttpChatConfig) -> Result<Self, String> {
        Self::with_token(config, token_from_env(LLM_TOKEN_ENV))
    }

    pub fn with_token(config: HttpChatConfig, token: Option<String>) -> Result<Self, String> {
        let client = JsonClient::new(
            config.endpoint.clone(),
            token,
            config.retry,
            Duration::from_secs(config.timeout_secs),
        )?;
        Ok(HttpChatBackend {
            id: format!("http:{}", config.model),
            config,
            client,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, String> {
        let response = self.client.post(&self.request_body(request))?;
        response
            .pointer(&self.config.response_path)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("response has no text at `{}`", self.config.response_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::serve;

    fn request() -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system("[Role]\nx"), ChatMessage::user("hi")],
            temperature: 0.7,
            seed: Some(9),
            intent: RequestIntent::Domains {
                classes: vec!["dog".into()],
                count: 2,
            },
        }
    }

    fn config(endpoint: String) -> HttpChatConfig {
        HttpChatConfig {
            endpoint,
            model: "test-model".into(),
            response_path: default_response_path(),
            timeout_secs: 5,
            retry: RetryPolicy {
                max_retries: 1,
                initial_delay_ms: 1,
                max_delay_ms: 1,
            },
        }
    }

    #[test]
    fn wire_contract() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"[\"a\",\"b\"]"}}]}"#;
        let (url, rx) = serve(vec![(200, reply.into())]);
        let backend = HttpChatBackend::with_token(config(url), Some("tok".into())).unwrap();
        assert_eq!(backend.complete(&request()).unwrap(), r#"["a","b"]"#);
        let captured = rx.recv().unwrap();
        let body: Value = serde_json::from_str(&captured.body).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hi");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["seed"], 9);
        assert!(body.get("intent").is_none());
    }

    #[test]
    fn custom_response_path_and_missing_text() {
        let (url, _rx) = serve(vec![
            (200, r#"{"output":{"text":"1. Snow"}}"#.into()),
            (200, "{}".into()),
        ]);
        let mut cfg = config(url);
        cfg.response_path = "/output/text".into();
        let backend = HttpChatBackend::with_token(cfg, None).unwrap();
        assert_eq!(backend.complete(&request()).unwrap(), "1. Snow");
        assert!(backend.complete(&request()).unwrap_err().contains("/output/text"));
    }
}
