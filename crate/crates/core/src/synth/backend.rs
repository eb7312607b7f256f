use std::time::Duration;

use base64::Engine;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{token_from_env, JsonClient, RetryPolicy};
use crate::meta_sim::MetaDistributionSpec;
use crate::rng::Stream;

pub const T2I_TOKEN_ENV: &str = "DOMEX_T2I_TOKEN";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRequest {
    pub class: String,
    pub domain: String,
    pub prompt: String,
    /// One seed per requested image.
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Generated {
    Vector(Vec<f64>),
    /// Encoded image bytes, written to disk by the caller.
    Bytes(Vec<u8>),
}

pub trait ImageBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns exactly `request.seeds.len()` outputs, or an error after retries.
    fn generate(&self, request: &ImageRequest) -> std::result::Result<Vec<Generated>, String>;
}

/// Feature-vector generator realizing a meta-distribution:
/// `x = class_mean(class) + domain_embed(domain) + σ·noise(seed)`.
///
/// The domain embedding is a Gaussian `N(0, τ² I)` draw keyed by the domain
/// name, so every extrapolated domain acts as one domain sampled from the spec.
#[derive(Clone, Debug)]
pub struct MockImageBackend {
    spec: MetaDistributionSpec,
    classes: Vec<String>,
    means: Vec<Vec<f64>>,
    seed: u64,
}

impl MockImageBackend {
    pub fn new(spec: MetaDistributionSpec, classes: Vec<String>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if classes.len() != spec.class_count {
            return Err(Error::validation(format!(
                "mock image backend has {} class names for a {}-class spec",
                classes.len(),
                spec.class_count
            )));
        }
        let means = (0..spec.class_count).map(|y| spec.class_mean(y)).collect();
        Ok(MockImageBackend {
            spec,
            classes,
            means,
            seed,
        })
    }

    pub fn spec(&self) -> &MetaDistributionSpec {
        &self.spec
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn class_embed(&self, class: &str) -> Option<&[f64]> {
        self.class_index(class).map(|y| self.means[y].as_slice())
    }

    pub fn domain_embed(&self, domain: &str) -> Vec<f64> {
        let mut rng = Stream::new(self.seed).named("domain-embed").named(domain).rng();
        (0..self.spec.dim)
            .map(|_| self.spec.domain_shift_scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn vector(&self, class: &str, domain: &str, seed: u64) -> Option<Vec<f64>> {
        let mean = self.class_embed(class)?;
        let shift = self.domain_embed(domain);
        let mut rng = Stream::new(seed).named("noise").rng();
        Some(
            mean.iter()
                .zip(&shift)
                .map(|(m, d)| m + d + self.spec.noise_scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }
}

impl ImageBackend for MockImageBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn generate(&self, request: &ImageRequest) -> std::result::Result<Vec<Generated>, String> {
        request
            .seeds
            .iter()
            .map(|s| {
                self.vector(&request.class, &request.domain, *s)
                    .map(Generated::Vector)
                    .ok_or_else(|| format!("unknown class `{}`", request.class))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpImageConfig {
    pub endpoint: String,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
    /// JSON Pointer to the array of base64 payloads.
    #[serde(default = "default_images_path")]
    pub response_path: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_side() -> u32 {
    512
}

fn default_images_path() -> String {
    "/images".into()
}

fn default_timeout_secs() -> u64 {
    300
}

#[derive(Debug)]
pub struct HttpImageBackend {
    config: HttpImageConfig,
    client: JsonClient,
}

impl HttpImageBackend {
    /// Reads the bearer token from `DOMEX_T2I_TOKEN`.
    pub fn new(config: HttpImageConfig) -> std::result::Result<Self, String> {
        Self::with_token(config, token_from_env(T2I_TOKEN_ENV))
    }

    pub fn with_token(config: HttpImageConfig, token: Option<String>) -> std::result::Result<Self, String> {
        let client = JsonClient::new(
            config.endpoint.clone(),
            token,
            config.retry,
            Duration::from_secs(config.timeout_secs),
        )?;
        Ok(HttpImageBackend { config, client })
    }

    pub fn request_body(&self, request: &ImageRequest) -> Value {
        json!({
            "prompt": request.prompt,
            "seed": request.seeds.first().copied().unwrap_or(0),
            "count": request.seeds.len(),
            "width": self.config.width,
            "height": self.config.height,
        })
    }
}

fn decode_item(item: &Value) -> std::result::Result<Vec<u8>, String> {
    let text = match item {
        Value::String(s) => s.as_str(),
        Value::Object(o) => ["b64_json", "base64", "image"]
            .iter()
            .find_map(|k| o.get(*k).and_then(Value::as_str))
            .ok_or("image object has no base64 field")?,
        _ => return Err("unexpected image payload type".into()),
    };
    base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| format!("invalid base64 payload: {e}"))
}

impl ImageBackend for HttpImageBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn generate(&self, request: &ImageRequest) -> std::result::Result<Vec<Generated>, String> {
        let response = self.client.post(&self.request_body(request))?;
        let items = response
            .pointer(&self.config.response_path)
            .and_then(Value::as_array)
            .ok_or_else(|| format!("response has no image array at `{}`", self.config.response_path))?;
        if items.len() != request.seeds.len() {
            return Err(format!("asked for {} images, got {}", request.seeds.len(), items.len()));
        }
        items.iter().map(|i| decode_item(i).map(Generated::Bytes)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub endpoint: String,
    /// JSON Pointer to the vector list; empty means the whole body.
    #[serde(default)]
    pub response_path: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

/// Client for an embedding service: `{inputs: [...]}` in, vector list out.
#[derive(Debug)]
pub struct EmbeddingClient {
    config: EmbeddingConfig,
    client: JsonClient,
}

impl EmbeddingClient {
    pub fn new(config: EmbeddingConfig, token: Option<String>) -> std::result::Result<Self, String> {
        let client = JsonClient::new(
            config.endpoint.clone(),
            token,
            config.retry,
            Duration::from_secs(config.timeout_secs),
        )?;
        Ok(EmbeddingClient { config, client })
    }

    pub fn embed(&self, inputs: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let response = self.client.post(&json!({ "inputs": inputs }))?;
        let list = response
            .pointer(&self.config.response_path)
            .and_then(Value::as_array)
            .ok_or_else(|| format!("response has no vector list at `{}`", self.config.response_path))?;
        let vectors = list
            .iter()
            .map(|v| {
                v.as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| "embedding is not a numeric array".to_string())
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if vectors.len() != inputs.len() {
            return Err(format!(
                "sent {} inputs, got {} embeddings",
                inputs.len(),
                vectors.len()
            ));
        }
        Ok(vectors)
    }
}
