//! Chunk index over the repository, rebuilt from scratch on every change.

pub mod embed;
pub mod segment;

use std::cmp::Ordering;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{Embedder, EmbeddingVector, HashedEmbedder, RemoteEmbedder};
pub use segment::{segment_document, Chunk};

use crate::repo::{DocumentFile, RepoError, RepositoryHandle, Revision};

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error(transparent)]
    Repo(#[from] RepoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub max_chunk_chars: usize,
    pub relevance_threshold: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: segment::DEFAULT_MAX_CHUNK_CHARS,
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
}

/// Immutable index built from one repository revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSnapshot {
    pub repo_revision: Option<Revision>,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub doc_path: String,
    pub score: f64,
}

impl IndexSnapshot {
    pub fn empty() -> Self {
        Self {
            repo_revision: None,
            entries: Vec::new(),
        }
    }

    pub fn from_documents(
        revision: Option<Revision>,
        documents: &[DocumentFile],
        config: &IndexConfig,
        embedder: &dyn Embedder,
    ) -> Result<Self, IndexError> {
        let mut entries = Vec::new();
        for doc in documents {
            for chunk in segment_document(&doc.path, &doc.content, config.max_chunk_chars) {
                let vector = embedder.embed(&chunk.text)?;
                entries.push(IndexEntry { chunk, vector });
            }
        }
        Ok(Self {
            repo_revision: revision,
            entries,
        })
    }

    pub fn build(
        handle: &RepositoryHandle,
        config: &IndexConfig,
        embedder: &dyn Embedder,
    ) -> Result<Self, IndexError> {
        let (revision, docs) = handle.snapshot()?;
        Self::from_documents(revision, &docs, config, embedder)
    }

    pub fn doc_paths(&self) -> Vec<&str> {
        let mut paths: Vec<&str> = self.entries.iter().map(|e| e.chunk.doc_path.as_str()).collect();
        paths.dedup();
        paths
    }

    fn score_all(&self, query: &EmbeddingVector) -> Vec<ScoredChunk> {
        self.entries
            .iter()
            .map(|e| ScoredChunk {
                chunk: e.chunk.clone(),
                score: query.dot(&e.vector),
            })
            .collect()
    }

    /// Top `k` chunks by cosine similarity. Ties break on
    /// `(doc_path, ordinal)` ascending. A zero query vector yields nothing.
    pub fn query_chunks(
        &self,
        embedder: &dyn Embedder,
        text: &str,
        k: usize,
    ) -> Result<Vec<ScoredChunk>, IndexError> {
        let query = embedder.embed(text)?;
        if query.is_zero() || k == 0 {
            return Ok(Vec::new());
        }
        let mut scored = self.score_all(&query);
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.chunk.doc_path.cmp(&b.chunk.doc_path))
                .then_with(|| a.chunk.ordinal.cmp(&b.chunk.ordinal))
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Documents ranked by their best chunk score, excluding those at or
    /// below `threshold`. An empty result means no document is relevant.
    pub fn rank_documents(
        &self,
        embedder: &dyn Embedder,
        text: &str,
        threshold: f64,
    ) -> Result<Vec<ScoredDocument>, IndexError> {
        let query = embedder.embed(text)?;
        if query.is_zero() {
            return Ok(Vec::new());
        }
        let mut best: Vec<ScoredDocument> = Vec::new();
        for sc in self.score_all(&query) {
            match best.iter_mut().find(|d| d.doc_path == sc.chunk.doc_path) {
                Some(d) => d.score = d.score.max(sc.score),
                None => best.push(ScoredDocument {
                    doc_path: sc.chunk.doc_path.clone(),
                    score: sc.score,
                }),
            }
        }
        best.retain(|d| d.score > threshold);
        best.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.doc_path.cmp(&b.doc_path))
        });
        Ok(best)
    }
}

/// Holds the current snapshot and swaps it atomically on rebuild.
pub struct KnowledgeIndex {
    current: RwLock<Arc<IndexSnapshot>>,
    rebuild_lock: std::sync::Mutex<()>,
    embedder: Arc<dyn Embedder>,
    config: IndexConfig,
}

impl std::fmt::Debug for KnowledgeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeIndex")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl KnowledgeIndex {
    pub fn new(embedder: Arc<dyn Embedder>, config: IndexConfig) -> Self {
        Self {
            current: RwLock::new(Arc::new(IndexSnapshot::empty())),
            rebuild_lock: std::sync::Mutex::new(()),
            embedder,
            config,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn current(&self) -> Arc<IndexSnapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Builds a fresh snapshot from HEAD and installs it.
    pub fn rebuild(&self, handle: &RepositoryHandle) -> Result<Arc<IndexSnapshot>, IndexError> {
        let _g = self.rebuild_lock.lock().unwrap_or_else(|e| e.into_inner());
        let snapshot = Arc::new(IndexSnapshot::build(handle, &self.config, self.embedder.as_ref())?);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = snapshot.clone();
        Ok(snapshot)
    }

    /// Returns a snapshot of the current HEAD, rebuilding if the installed
    /// one is stale (for instance after a direct edit to the repository).
    pub fn ensure_current(&self, handle: &RepositoryHandle) -> Result<Arc<IndexSnapshot>, IndexError> {
        let head = handle.head()?;
        let snapshot = self.current();
        if snapshot.repo_revision == head {
            return Ok(snapshot);
        }
        self.rebuild(handle)
    }

    /// Rebuilds on a background thread.
    pub fn rebuild_in_background(self: &Arc<Self>, handle: RepositoryHandle) {
        let index = Arc::clone(self);
        std::thread::spawn(move || {
            if let Err(e) = index.rebuild(&handle) {
                tracing::warn!(error = %e, "background index rebuild failed");
            }
        });
    }
}
