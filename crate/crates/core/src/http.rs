//! Blocking JSON-over-HTTP client with capped exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

fn is_retryable_status(status: u16) -> bool {
    matches!(status, 408 | 429 | 500 | 502 | 503 | 504)
}

#[derive(Clone, Debug)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(
        endpoint: impl Into<String>,
        token: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| format!("building http client: {e}"))?;
        Ok(JsonClient {
            client,
            endpoint: endpoint.into(),
            token,
            retry,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POSTs `body`, retrying transport errors and retryable statuses.
    pub fn post(&self, body: &Value) -> Result<Value, String> {
        let mut attempt = 0;
        loop {
            match self.try_post(body) {
                Ok(v) => return Ok(v),
                Err((msg, retryable)) => {
                    if !retryable || attempt >= self.retry.max_retries {
                        return Err(format!("{msg} (after {} attempt(s))", attempt + 1));
                    }
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn try_post(&self, body: &Value) -> Result<Value, (String, bool)> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| (format!("request to {} failed: {e}", self.endpoint), true))?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let text = resp.text().unwrap_or_default();
            return Err((
                format!("HTTP {status} from {}: {text}", self.endpoint),
                is_retryable_status(status),
            ));
        }
        resp.json::<Value>()
            .map_err(|e| (format!("invalid JSON from {}: {e}", self.endpoint), false))
    }
}

/// Reads a token from the named environment variable, if set and non-empty.
pub fn token_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|t| !t.is_empty())
}


#[cfg(test)]
mod tests {
    use super::*;

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 2,
            initial_delay_ms: 1,
            max_delay_ms: 2,
        }
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy {
            max_retries: 10,
            initial_delay_ms: 100,
            max_delay_ms: 1000,
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(3), Duration::from_millis(800));
        assert_eq!(p.delay(4), Duration::from_millis(1000));
        assert_eq!(p.delay(70), Duration::from_millis(1000));
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, rx) = testing::serve(vec![(503, "{}".into()), (200, r#"{"ok":true}"#.into())]);
        let client = JsonClient::new(url, Some("secret".into()), fast_retry(), Duration::from_secs(5)).unwrap();
        let v = client.post(&serde_json::json!({"a": 1})).unwrap();
        assert_eq!(v["ok"], true);
        let first = rx.recv().unwrap();
        assert!(first
            .headers
            .iter()
            .any(|h| h.eq_ignore_ascii_case("authorization: Bearer secret")));
        assert_eq!(first.body, r#"{"a":1}"#);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, _rx) = testing::serve(vec![(400, "bad".into())]);
        let client = JsonClient::new(url, None, fast_retry(), Duration::from_secs(5)).unwrap();
        let err = client.post(&serde_json::json!({})).unwrap_err();
        assert!(err.contains("HTTP 400"), "{err}");
        assert!(err.contains("1 attempt"), "{err}");
    }
}
