use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Embedder, KnowledgeError};

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K_RETRIEVAL: usize = 5;

const EMBEDDINGS_MAGIC: &[u8; 8] = b"DXCEMBED";
const META_FILE: &str = "store.json";
const EMBEDDINGS_FILE: &str = "embeddings.bin";
const DOCS_FILE: &str = "documents.jsonl";
const EMBED_BATCH: usize = 32;

/// One section of a source page, embedded as its own document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disease_code: Option<String>,
    #[serde(default)]
    pub section: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub description: String,
    pub source: String,
    pub doc_count: usize,
    pub embedder: String,
    pub dim: usize,
    pub similarity: String,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc: KnowledgeDoc,
    pub score: f64,
    pub rank: usize,
}

/// Immutable after ingestion; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    metadata: StoreMetadata,
    docs: Vec<KnowledgeDoc>,
    embeddings: Vec<Vec<f64>>,
}

/// Cosine of the angle between `a` and `b`; 0 when either is the zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<KnowledgeDoc>, KnowledgeError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: KnowledgeDoc = serde_json::from_str(line).map_err(|e| KnowledgeError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if doc.text.trim().is_empty() {
            return Err(KnowledgeError::Parse {
                line: i + 1,
                message: format!("document {:?} has empty text", doc.doc_id),
            });
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(KnowledgeError::DuplicateDoc(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a line-delimited corpus and embeds every document once.
pub fn ingest_corpus(
    path: impl AsRef<Path>,
    embedder: &dyn Embedder,
    description: &str,
) -> Result<VectorStore, KnowledgeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::io(path, e))?;
    let docs = parse_corpus(&text)?;
    let source = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    VectorStore::build(docs, embedder, description, &source)
}

/// The `k` documents most similar to `query_text`.
pub fn query_topk(
    store: &VectorStore,
    query_text: &str,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<RetrievalResult>, KnowledgeError> {
    store.query(query_text, k, embedder)
}

impl VectorStore {
    pub fn build(
        docs: Vec<KnowledgeDoc>,
        embedder: &dyn Embedder,
        description: &str,
        source: &str,
    ) -> Result<Self, KnowledgeError> {
        if description.trim().is_empty() {
            return Err(KnowledgeError::EmptyDescription);
        }
        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(KnowledgeError::DuplicateDoc(d.doc_id.clone()));
            }
        }
        let mut embeddings = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = chunk.iter().map(|d| d.text.as_str()).collect();
            let vecs = embedder.embed(&texts)?;
            if vecs.len() != texts.len() || vecs.iter().any(|v| v.len() != embedder.dim()) {
                return Err(KnowledgeError::Format("embedder returned wrong shape".into()));
            }
            embeddings.extend(vecs);
        }
        let metadata = StoreMetadata {
            description: description.to_string(),
            source: source.to_string(),
            doc_count: docs.len(),
            embedder: embedder.id(),
            dim: embedder.dim(),
            similarity: "cosine".into(),
            format_version: STORE_FORMAT_VERSION,
        };
        Ok(Self {
            metadata,
            docs,
            embeddings,
        })
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn docs(&self) -> &[KnowledgeDoc] {
        &self.docs
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, doc_id: &str) -> Option<&KnowledgeDoc> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn query(&self, query_text: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<RetrievalResult>, KnowledgeError> {
        if k == 0 {
            return Err(KnowledgeError::InvalidK);
        }
        if self.docs.is_empty() {
            return Err(KnowledgeError::EmptyStore);
        }
        if embedder.id() != self.metadata.embedder || embedder.dim() != self.metadata.dim {
            return Err(KnowledgeError::EmbedderMismatch {
                stored: self.metadata.embedder.clone(),
                given: embedder.id(),
            });
        }
        let q = embedder
            .embed(&[query_text])?
            .pop()
            .ok_or_else(|| KnowledgeError::Format("embedder returned nothing".into()))?;
        let mut scored: Vec<(f64, usize)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine_similarity(&q, e), i))
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.docs[a.1].doc_id.cmp(&self.docs[b.1].doc_id))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, (score, i))| RetrievalResult {
                doc: self.docs[i].clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    /// Writes `store.json`, `embeddings.bin` and `documents.jsonl` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), KnowledgeError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| KnowledgeError::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.metadata).expect("serializable") + "\n";
        write(&dir.join(META_FILE), meta.as_bytes())?;

        let mut bin = Vec::with_capacity(24 + 8 * self.metadata.dim * self.docs.len());
        bin.extend_from_slice(EMBEDDINGS_MAGIC);
        bin.extend_from_slice(&STORE_FORMAT_VERSION.to_le_bytes());
        bin.extend_from_slice(&(self.metadata.dim as u32).to_le_bytes());
        bin.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        for v in self.embeddings.iter().flatten() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        write(&dir.join(EMBEDDINGS_FILE), &bin)?;

        let mut docs = String::new();
        for d in &self.docs {
            docs.push_str(&serde_json::to_string(d).expect("serializable"));
            docs.push('\n');
        }
        write(&dir.join(DOCS_FILE), docs.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, KnowledgeError> {
        let dir = dir.as_ref();
        let meta_path = dir.join(META_FILE);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| KnowledgeError::io(&meta_path, e))?;
        let metadata: StoreMetadata =
            serde_json::from_str(&meta_text).map_err(|e| KnowledgeError::Format(format!("{META_FILE}: {e}")))?;
        if metadata.format_version != STORE_FORMAT_VERSION {
            return Err(KnowledgeError::Format(format!("unsupported version {}", metadata.format_version)));
        }

        let docs_path = dir.join(DOCS_FILE);
        let docs_text = std::fs::read_to_string(&docs_path).map_err(|e| KnowledgeError::io(&docs_path, e))?;
        let docs = parse_corpus(&docs_text)?;

        let bin_path = dir.join(EMBEDDINGS_FILE);
        let bin = std::fs::read(&bin_path).map_err(|e| KnowledgeError::io(&bin_path, e))?;
        if bin.len() < 24 || &bin[..8] != EMBEDDINGS_MAGIC {
            return Err(KnowledgeError::Format("bad embeddings header".into()));
        }
        let version = u32::from_le_bytes(bin[8..12].try_into().expect("4 bytes"));
        let dim = u32::from_le_bytes(bin[12..16].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(bin[16..24].try_into().expect("8 bytes")) as usize;
        if version != STORE_FORMAT_VERSION || dim != metadata.dim || count != docs.len() || count != metadata.doc_count {
            return Err(KnowledgeError::Format("embeddings header disagrees with metadata".into()));
        }
        let body = &bin[24..];
        if body.len() != 8 * dim * count {
            return Err(KnowledgeError::Format("embeddings body has wrong length".into()));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let embeddings = if dim == 0 {
            vec![Vec::new(); count]
        } else {
            flat.chunks(dim).map(<[f64]>::to_vec).collect()
        };
        Ok(Self {
            metadata,
            docs,
            embeddings,
        })
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), KnowledgeError> {
    std::fs::write(path, bytes).map_err(|e| KnowledgeError::io(path, e))
}
