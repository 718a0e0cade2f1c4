use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::gateway::{ProviderError, RetryPolicy};

pub const HASH_EMBEDDER_DIM: usize = 64;

/// Maps texts to fixed-length vectors.
pub trait Embedder: Send + Sync {
    /// Stable identifier; stores remember it and refuse queries from another embedder.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Offline embedder: signed feature hashing of lower-cased word tokens and
/// word bigrams, L2-normalized. Identical text gives identical vectors, and
/// texts sharing vocabulary land close together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, HASH_EMBEDDER_DIM)
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }

    fn bucket(&self, feature: &str) -> (usize, f64) {
        let mut h = FnvHasher::with_key(self.seed ^ 0xcbf2_9ce4_8422_2325);
        h.write(feature.as_bytes());
        let v = h.finish();
        let sign = if v >> 63 == 1 { -1.0 } else { 1.0 };
        ((v % self.dim as u64) as usize, sign)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !(c.is_alphanumeric() || c == '.'))
            .map(|t| t.trim_matches('.'))
            .filter(|t| !t.is_empty())
            .collect();
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            let (i, s) = self.bucket(t);
            v[i] += s;
        }
        for pair in tokens.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            v[i] += 0.5 * s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-fnv1a-v1:seed={}:dim={}", self.seed, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub dim: usize,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    index: usize,
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn from_env(config: RemoteEmbedderConfig) -> Self {
        let key = std::env::var(&config.api_key_env).ok();
        Self::new(config, key, RetryPolicy::default())
    }

    pub fn new(config: RemoteEmbedderConfig, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            retry,
            agent,
        }
    }

    fn call(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbedBody {
                model: &self.config.model,
                input: texts,
            })
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ProviderError::Http { status, body });
        }
        let mut parsed: EmbedResponse = serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "{} embeddings for {} inputs",
                parsed.data.len(),
                texts.len()
            )));
        }
        let out: Vec<Vec<f64>> = parsed.data.into_iter().map(|d| d.embedding).collect();
        if out.iter().any(|v| v.len() != self.config.dim || v.iter().any(|x| !x.is_finite())) {
            return Err(ProviderError::Malformed("embedding with wrong dimension or non-finite value".into()));
        }
        Ok(out)
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.retry.run(|| self.call(texts)).map(|(v, _)| v).map_err(|(e, _)| e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let e = HashEmbedder::new(7);
        let a = e.embed_one("Chronic kidney disease causes anemia");
        assert_eq!(a, e.embed_one("Chronic kidney disease causes anemia"));
        assert_eq!(a.len(), 64);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_ne!(a, HashEmbedder::new(8).embed_one("Chronic kidney disease causes anemia"));
    }

    #[test]
    fn punctuation_only_text_is_zero() {
        assert!(HashEmbedder::new(0).embed_one("?!").iter().all(|&x| x == 0.0));
    }
}
