//! Dense embeddings behind a pluggable provider.
//!
//! Two providers ship with the crate: [`HashEmbedder`], a deterministic
//! bag-of-words feature-hashing embedder used offline and in tests, and
//! [`HttpEmbedder`], a client for a remote sentence-embedding service.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{JsonClient, ProviderError};
use crate::text::{fnv1a64, tokenize};

/// Default number of texts per provider call.
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("hash embedding dimension must be at least 8, got {0}")]
    DimensionTooSmall(usize),
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("vector has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A unit-norm dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps values that are already unit norm (e.g. deserialized checkpoints).
    pub fn from_unit(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Cosine similarity; both sides are unit norm so this is the dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.dot(other).clamp(-1.0, 1.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize_l2(v: &[f64]) -> Result<Embedding, EmbeddingError> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(Embedding(v.iter().map(|x| x / norm).collect()))
}

/// Whether the text is a corpus document or a search query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Document,
    Query,
}

/// A source of raw (not necessarily normalized) vectors.
///
/// Implementations must be deterministic: the same text and mode always map
/// to the same vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn batch_size(&self) -> usize {
        DEFAULT_BATCH_SIZE
    }

    fn embed_batch(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Signed feature hashing over the shared tokenizer, L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> Result<Embedding, EmbeddingError> {
    if dim < 8 {
        return Err(EmbeddingError::DimensionTooSmall(dim));
    }
    normalize_l2(&hash_counts(text, dim))
}

fn hash_counts(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    v
}

/// Offline embedder: [`hash_embed`] behind the provider contract.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub batch_size: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn embed_batch(&self, texts: &[String], _mode: EmbedMode) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if self.dim < 8 {
            return Err(EmbeddingError::DimensionTooSmall(self.dim));
        }
        Ok(texts.iter().map(|t| hash_counts(t, self.dim)).collect())
    }
}

/// Configuration for [`HttpEmbedder`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub batch_size: usize,
    /// Template applied to documents; `{text}` is replaced by the input.
    pub document_template: String,
    /// Template applied to queries; `{text}` is replaced by the input.
    pub query_template: String,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: Vec<String>,
    mode: EmbedMode,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedding service speaking `{model, inputs, mode}` → `{vectors}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig, api_key: Option<String>) -> Result<Self, EmbeddingError> {
        let client = JsonClient::new(config.endpoint.clone(), api_key)?;
        Ok(Self { config, client })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn embed_batch(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let template = match mode {
            EmbedMode::Document => &self.config.document_template,
            EmbedMode::Query => &self.config.query_template,
        };
        let inputs = texts.iter().map(|t| template.replace("{text}", t)).collect();
        let resp: EmbedResponse = self.client.post(&EmbedRequest {
            model: &self.config.model,
            inputs,
            mode,
        })?;
        Ok(resp.vectors)
    }
}

/// Memoizes another provider so that repeated texts are never re-requested.
pub struct CachedEmbedder<P> {
    inner: P,
    cache: Mutex<HashMap<(EmbedMode, String), Vec<f64>>>,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn batch_size(&self) -> usize {
        self.inner.batch_size()
    }

    fn embed_batch(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(&(mode, (*t).clone())) && seen.insert(*t))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing, mode)?;
            if fresh.len() != missing.len() {
                return Err(EmbeddingError::CountMismatch {
                    expected: missing.len(),
                    got: fresh.len(),
                });
            }
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (t, v) in missing.into_iter().zip(fresh) {
                cache.insert((mode, t), v);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[&(mode, t.clone())].clone()).collect())
    }
}

/// Embeds `texts` in provider-sized batches and normalizes every vector.
///
/// Up to `parallelism` batches are in flight at once; the output keeps the
/// input order regardless of completion order.
pub fn embed_corpus(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    mode: EmbedMode,
    parallelism: usize,
) -> Result<Vec<Embedding>, EmbeddingError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let batch = provider.batch_size().max(1);
    let chunks: Vec<&[String]> = texts.chunks(batch).collect();
    let run = |chunk: &&[String]| -> Result<Vec<Embedding>, EmbeddingError> {
        let raw = provider.embed_batch(chunk, mode)?;
        if raw.len() != chunk.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: chunk.len(),
                got: raw.len(),
            });
        }
        raw.iter()
            .map(|v| {
                if v.len() != provider.dim() {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: provider.dim(),
                        got: v.len(),
                    });
                }
                normalize_l2(v)
            })
            .collect()
    };
    let results: Vec<Result<Vec<Embedding>, EmbeddingError>> = if parallelism > 1 && chunks.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| ProviderError::Other(e.to_string()))?;
        pool.install(|| chunks.par_iter().map(run).collect())
    } else {
        chunks.iter().map(run).collect()
    };
    let mut out = Vec::with_capacity(texts.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Embeds a single query string.
pub fn embed_query(text: &str, provider: &dyn EmbeddingProvider) -> Result<Embedding, EmbeddingError> {
    let mut v = embed_corpus(&[text.to_string()], provider, EmbedMode::Query, 1)?;
    Ok(v.remove(0))
}
