//! Sectioned document corpus, embedded through an [`Embedder`] and searched
//! by exact cosine similarity.

mod embed;
mod store;

pub use embed::{Embedder, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig, HASH_EMBEDDER_DIM};
pub use store::{
    cosine_similarity, ingest_corpus, parse_corpus, query_topk, KnowledgeDoc, RetrievalResult, StoreMetadata,
    VectorStore, DEFAULT_K_RETRIEVAL, STORE_FORMAT_VERSION,
};

use std::path::PathBuf;

use crate::gateway::ProviderError;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateDoc(String),
    #[error("embedder failed: {0}")]
    Embedder(#[from] ProviderError),
    #[error("store is empty")]
    EmptyStore,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("store was built with {stored}, query uses {given}")]
    EmbedderMismatch { stored: String, given: String },
    #[error("store files: {0}")]
    Format(String),
    #[error("store description must be nonempty")]
    EmptyDescription,
}

impl KnowledgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KnowledgeError::Io {
            path: path.into(),
            source,
        }
    }
}
