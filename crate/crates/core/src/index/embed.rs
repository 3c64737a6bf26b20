//! Text embedders.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::IndexError;

pub const DEFAULT_DIMENSION: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dimension: usize) -> Self {
        Self {
            values: vec![0.0; dimension],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Scales to unit length; a zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, IndexError>;
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing of token frequencies, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
        }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, IndexError> {
        let mut v = EmbeddingVector::zeros(self.dimension);
        // Lowercase before splitting: some characters expand when lowercased.
        for token in tokens(&text.to_lowercase()) {
            let h = fnv1a64(token.as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v.values[idx] += sign;
        }
        Ok(v.normalized())
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    embedding: Vec<f64>,
}

/// Embedder calling `POST <endpoint>` with `{"input": text}` and expecting
/// `{"embedding": [..]}` of the configured dimension.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            dimension,
            agent,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, IndexError> {
        let unavailable = |e: String| IndexError::ProviderUnavailable(e);
        let response: RemoteResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(RemoteRequest { input: text })
            .map_err(|e| unavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(e.to_string()))?;
        if response.embedding.len() != self.dimension {
            return Err(unavailable(format!(
                "expected dimension {}, got {}",
                self.dimension,
                response.embedding.len()
            )));
        }
        Ok(EmbeddingVector {
            values: response.embedding,
        }
        .normalized())
    }
}
