use std::time::Duration;

use async_trait::async_trait;
use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use super::RewardError;
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
    pub dim: usize,
}

fn normalized(mut values: Vec<f64>, provider_id: &str) -> Result<EmbeddingVector, RewardError> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(RewardError::Provider("embedding has zero norm".into()));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(EmbeddingVector {
        dim: values.len(),
        values,
        provider_id: provider_id.to_string(),
    })
}

/// Cosine similarity; vectors from [`EmbeddingProvider`]s are unit length,
/// but the norms are divided out anyway.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RewardError>;

    fn provider_id(&self) -> String;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, RewardError> {
        let mut v = self.embed_batch(&[text.to_string()]).await?;
        Ok(v.pop().expect("one text in, one vector out"))
    }
}

/// Signed feature hashing of lowercase word unigrams and bigrams. It is a
/// deterministic stand-in for a sentence encoder, suitable for tests.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn bucket(&self, feature: &str) -> (usize, f64) {
        let h = Sha256::digest(feature.as_bytes());
        let idx = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % self.dim;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        (idx, sign)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, RewardError> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase())
            .collect();
        if words.is_empty() {
            return Err(RewardError::Provider("text has no words to embed".into()));
        }
        let mut values = vec![0.0; self.dim];
        for w in &words {
            let (i, s) = self.bucket(w);
            values[i] += s;
        }
        for pair in words.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            values[i] += 0.5 * s;
        }
        normalized(values, &self.provider_id())
    }
}

#[async_trait]
impl EmbeddingProvider for HashingEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RewardError> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    fn provider_id(&self) -> String {
        format!("hashing-{}", self.dim)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service that accepts `{"texts": [...]}` and
/// answers `{"vectors": [[...], ...]}`. Results are cached by text digest.
pub struct RemoteEmbedder {
    endpoint: String,
    client: reqwest::Client,
    cache: DashMap<String, EmbeddingVector>,
    in_flight: Semaphore,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, max_in_flight: usize) -> Result<Self, RewardError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| RewardError::Provider(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
            cache: DashMap::new(),
            in_flight: Semaphore::new(max_in_flight.max(1)),
        })
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RewardError> {
        if let Some(t) = texts.iter().find(|t| t.trim().is_empty()) {
            return Err(RewardError::Provider(format!("cannot embed empty text {t:?}")));
        }
        let keys: Vec<String> = texts.iter().map(sha256_hex).collect();
        let missing: Vec<String> = {
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .zip(&keys)
                .filter(|(_, k)| !self.cache.contains_key(*k) && seen.insert((*k).clone()))
                .map(|(t, _)| t.clone())
                .collect()
        };
        if !missing.is_empty() {
            let _permit = self.in_flight.acquire().await.expect("semaphore is never closed");
            let resp = self
                .client
                .post(&self.endpoint)
                .json(&EmbedRequest { texts: &missing })
                .send()
                .await
                .and_then(|r| r.error_for_status())
                .map_err(|e| RewardError::Provider(e.to_string()))?;
            let body: EmbedResponse = resp
                .json()
                .await
                .map_err(|e| RewardError::Provider(format!("malformed response: {e}")))?;
            if body.vectors.len() != missing.len() {
                return Err(RewardError::Provider(format!(
                    "{} vectors for {} texts",
                    body.vectors.len(),
                    missing.len()
                )));
            }
            let id = self.provider_id();
            for (text, values) in missing.iter().zip(body.vectors) {
                self.cache.insert(sha256_hex(text), normalized(values, &id)?);
            }
        }
        Ok(keys
            .iter()
            .map(|k| self.cache.get(k).expect("just filled").clone())
            .collect())
    }

    fn provider_id(&self) -> String {
        format!("remote:{}", self.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_unit() {
        let e = HashingEmbedder::default();
        let a = e.embed_text("The loop stops one element early.").unwrap();
        let b = e.embed_text("The loop stops one element early.").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(HashingEmbedder::default().embed_text("").is_err());
        assert!(HashingEmbedder::default().embed_text("  ?! ").is_err());
    }

    #[test]
    fn unrelated_sentences_are_less_similar_than_self() {
        let e = HashingEmbedder::default();
        let a = e.embed_text("the index is off by one").unwrap();
        let b = e.embed_text("dictionary keys must be sorted alphabetically").unwrap();
        assert!(cosine(&a, &b) < 1.0 - 1e-6);
    }
}
