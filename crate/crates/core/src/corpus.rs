//! Tokenized data batches with document boundaries and raw-text sidecars.
//!
//! On disk a corpus is a TOML manifest plus, per batch, three files:
//!
//! * a token file of little-endian `u32` ids with no header,
//! * a doc index, one `{doc_id, batch_id, token_start, token_end}` per line,
//! * a text sidecar, one `{doc_id, text}` per line.
//!
//! Document spans must be disjoint and sorted but need not tile the buffer;
//! separator and padding tokens may sit between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::io::{self, RecordError};

pub type BatchId = u64;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("batch {batch_id}: size mismatch: token_count {token_count} needs {expected} bytes, file has {actual}")]
    SizeMismatch {
        batch_id: BatchId,
        token_count: usize,
        expected: u64,
        actual: u64,
    },
    #[error("batch {batch_id}: batch ids must be unique and increasing")]
    BatchOrder { batch_id: BatchId },
    #[error("batch {batch_id}, doc {doc_id}: empty span [{start}, {end})")]
    EmptySpan {
        batch_id: BatchId,
        doc_id: String,
        start: usize,
        end: usize,
    },
    #[error("batch {batch_id}, doc {doc_id}: span [{start}, {end}) outside [0, {token_count})")]
    SpanOutOfRange {
        batch_id: BatchId,
        doc_id: String,
        start: usize,
        end: usize,
        token_count: usize,
    },
    #[error("batch {batch_id}, doc {doc_id}: overlapping spans with doc {previous}")]
    OverlappingSpans {
        batch_id: BatchId,
        doc_id: String,
        previous: String,
    },
    #[error("batch {batch_id}, doc {doc_id}: spans not sorted by start")]
    UnsortedSpans { batch_id: BatchId, doc_id: String },
    #[error("batch {batch_id}: duplicate doc_id {doc_id}")]
    DuplicateDoc { batch_id: BatchId, doc_id: String },
    #[error("batch {batch_id}, doc {doc_id}: index record names batch {found}")]
    WrongBatch {
        batch_id: BatchId,
        doc_id: String,
        found: BatchId,
    },
    #[error("unknown batch_id {0}")]
    UnknownBatch(BatchId),
    #[error("batch {batch_id}: doc index and text sidecar disagree (missing text: {missing:?}; text without index entry: {extra:?})")]
    SidecarMismatch {
        batch_id: BatchId,
        missing: Vec<String>,
        extra: Vec<String>,
    },
}

/// One batch entry of the manifest. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDescriptor {
    pub batch_id: BatchId,
    pub token_file: PathBuf,
    pub token_count: usize,
    pub doc_index: PathBuf,
    pub text_sidecar: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub tokenizer_id: String,
    pub sequence_length: usize,
    #[serde(default)]
    pub pad_token: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, rename = "batch")]
    pub batches: Vec<BatchDescriptor>,
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub doc_id: String,
    pub batch_id: BatchId,
    pub token_start: usize,
    pub token_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub batch_id: BatchId,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

impl Document {
    pub fn span(&self) -> Range<usize> {
        self.token_start..self.token_end
    }

    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.token_end == self.token_start
    }
}

/// The ordered token stream between two checkpoints. Documents view into a
/// shared immutable buffer; rewrites always build a new batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBatch {
    batch_id: BatchId,
    documents: Vec<Document>,
    tokens: Arc<[u32]>,
}

impl DataBatch {
    /// Builds a batch, checking that spans are non-empty, in range, sorted by
    /// start and pairwise disjoint, and that doc ids are unique.
    pub fn new(
        batch_id: BatchId,
        documents: Vec<Document>,
        tokens: impl Into<Arc<[u32]>>,
    ) -> Result<Self, CorpusError> {
        let tokens = tokens.into();
        let spans: Vec<(&str, usize, usize)> = documents
            .iter()
            .map(|d| (d.doc_id.as_str(), d.token_start, d.token_end))
            .collect();
        check_spans(batch_id, tokens.len(), &spans)?;
        for doc in &documents {
            if doc.batch_id != batch_id {
                return Err(CorpusError::WrongBatch {
                    batch_id,
                    doc_id: doc.doc_id.clone(),
                    found: doc.batch_id,
                });
            }
        }
        Ok(Self {
            batch_id,
            documents,
            tokens,
        })
    }

    pub fn batch_id(&self) -> BatchId {
        self.batch_id
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn doc_tokens(&self, doc: &Document) -> &[u32] {
        &self.tokens[doc.span()]
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Doc id to position in [`Self::documents`].
    pub fn positions(&self) -> BTreeMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.as_str(), i))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty() && self.tokens.is_empty()
    }

    /// A copy of this batch carrying a different id, with every document
    /// relabelled to match.
    pub fn relabel(&self, batch_id: BatchId) -> DataBatch {
        let documents = self
            .documents
            .iter()
            .map(|d| Document {
                batch_id,
                ..d.clone()
            })
            .collect();
        DataBatch {
            batch_id,
            documents,
            tokens: self.tokens.clone(),
        }
    }
}

fn check_spans(
    batch_id: BatchId,
    token_count: usize,
    spans: &[(&str, usize, usize)],
) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    let mut prev: Option<(&str, usize, usize)> = None;
    for &(doc_id, start, end) in spans {
        if !seen.insert(doc_id) {
            return Err(CorpusError::DuplicateDoc {
                batch_id,
                doc_id: doc_id.to_string(),
            });
        }
        if end <= start {
            return Err(CorpusError::EmptySpan {
                batch_id,
                doc_id: doc_id.to_string(),
                start,
                end,
            });
        }
        if end > token_count {
            return Err(CorpusError::SpanOutOfRange {
                batch_id,
                doc_id: doc_id.to_string(),
                start,
                end,
                token_count,
            });
        }
        if let Some((prev_id, prev_start, prev_end)) = prev {
            if start < prev_end && end > prev_start {
                return Err(CorpusError::OverlappingSpans {
                    batch_id,
                    doc_id: doc_id.to_string(),
                    previous: prev_id.to_string(),
                });
            }
            if start < prev_start {
                return Err(CorpusError::UnsortedSpans {
                    batch_id,
                    doc_id: doc_id.to_string(),
                });
            }
        }
        prev = Some((doc_id, start, end));
    }
    Ok(())
}

impl CorpusManifest {
    pub fn new(tokenizer_id: impl Into<String>, sequence_length: usize, pad_token: u32) -> Self {
        Self {
            tokenizer_id: tokenizer_id.into(),
            sequence_length,
            pad_token,
            config_hash: None,
            batches: Vec::new(),
            root: PathBuf::new(),
        }
    }

    pub fn descriptor(&self, batch_id: BatchId) -> Result<&BatchDescriptor, CorpusError> {
        self.batches
            .iter()
            .find(|b| b.batch_id == batch_id)
            .ok_or(CorpusError::UnknownBatch(batch_id))
    }

    /// Batch following `batch_id` in training order.
    pub fn successor(&self, batch_id: BatchId) -> Option<BatchId> {
        let pos = self.batches.iter().position(|b| b.batch_id == batch_id)?;
        self.batches.get(pos + 1).map(|b| b.batch_id)
    }

    pub fn predecessor(&self, batch_id: BatchId) -> Option<BatchId> {
        let pos = self.batches.iter().position(|b| b.batch_id == batch_id)?;
        pos.checked_sub(1).map(|p| self.batches[p].batch_id)
    }

    pub fn batch_ids(&self) -> Vec<BatchId> {
        self.batches.iter().map(|b| b.batch_id).collect()
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        io::atomic_write(path, self.to_toml().as_bytes())?;
        Ok(())
    }
}

/// Parses a manifest and checks every invariant that can be verified without
/// reading token buffers: file sizes, batch ordering and doc spans.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    let mut manifest: CorpusManifest =
        toml::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if manifest.sequence_length == 0 {
        return Err(CorpusError::Manifest {
            path: path.to_path_buf(),
            message: "sequence_length must be positive".into(),
        });
    }
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let mut prev: Option<BatchId> = None;
    for desc in &manifest.batches {
        if prev.is_some_and(|p| desc.batch_id <= p) {
            return Err(CorpusError::BatchOrder {
                batch_id: desc.batch_id,
            });
        }
        prev = Some(desc.batch_id);

        let token_path = manifest.resolve(&desc.token_file);
        let actual = fs::metadata(&token_path)
            .map_err(|e| RecordError::io(&token_path, e))?
            .len();
        let expected = desc.token_count as u64 * 4;
        if actual != expected {
            return Err(CorpusError::SizeMismatch {
                batch_id: desc.batch_id,
                token_count: desc.token_count,
                expected,
                actual,
            });
        }

        let index = read_index(&manifest.resolve(&desc.doc_index), desc.batch_id)?;
        let spans: Vec<_> = index
            .iter()
            .map(|r| (r.doc_id.as_str(), r.token_start, r.token_end))
            .collect();
        check_spans(desc.batch_id, desc.token_count, &spans)?;
    }
    Ok(manifest)
}

fn read_index(path: &Path, batch_id: BatchId) -> Result<Vec<IndexRecord>, CorpusError> {
    let index: Vec<IndexRecord> = io::read_jsonl(path)?;
    if let Some(r) = index.iter().find(|r| r.batch_id != batch_id) {
        return Err(CorpusError::WrongBatch {
            batch_id,
            doc_id: r.doc_id.clone(),
            found: r.batch_id,
        });
    }
    Ok(index)
}

pub fn read_token_file(path: &Path) -> Result<Vec<u32>, CorpusError> {
    let bytes = fs::read(path).map_err(|e| RecordError::io(path, e))?;
    Ok(decode_tokens(&bytes))
}

pub fn decode_tokens(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn encode_tokens(tokens: &[u32]) -> Vec<u8> {
    tokens.iter().flat_map(|t| t.to_le_bytes()).collect()
}

pub fn read_batch(manifest: &CorpusManifest, batch_id: BatchId) -> Result<DataBatch, CorpusError> {
    let desc = manifest.descriptor(batch_id)?;
    read_batch_files(
        batch_id,
        &manifest.resolve(&desc.token_file),
        &manifest.resolve(&desc.doc_index),
        &manifest.resolve(&desc.text_sidecar),
    )
}

pub fn read_batch_files(
    batch_id: BatchId,
    token_file: &Path,
    doc_index: &Path,
    text_sidecar: &Path,
) -> Result<DataBatch, CorpusError> {
    let tokens = read_token_file(token_file)?;
    let index = read_index(doc_index, batch_id)?;
    let texts: Vec<TextRecord> = io::read_jsonl(text_sidecar)?;

    let mut by_id: BTreeMap<String, String> = BTreeMap::new();
    let mut extra = Vec::new();
    for t in texts {
        match by_id.entry(t.doc_id) {
            std::collections::btree_map::Entry::Occupied(e) => extra.push(e.key().clone()),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(t.text);
            }
        }
    }
    let mut missing = Vec::new();
    let mut documents = Vec::with_capacity(index.len());
    for r in index {
        match by_id.remove(&r.doc_id) {
            Some(text) => documents.push(Document {
                doc_id: r.doc_id,
                batch_id,
                token_start: r.token_start,
                token_end: r.token_end,
                text,
            }),
            None => missing.push(r.doc_id),
        }
    }
    extra.extend(by_id.into_keys());
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CorpusError::SidecarMismatch {
            batch_id,
            missing,
            extra,
        });
    }
    DataBatch::new(batch_id, documents, tokens)
}

/// File names used by [`write_batch`] for a given batch id.
pub fn batch_file_names(batch_id: BatchId) -> (PathBuf, PathBuf, PathBuf) {
    (
        PathBuf::from(format!("batch_{batch_id}.tokens")),
        PathBuf::from(format!("batch_{batch_id}.index.jsonl")),
        PathBuf::from(format!("batch_{batch_id}.text.jsonl")),
    )
}

/// Writes the token buffer, doc index and sidecar into `out_dir` and returns
/// a descriptor whose paths are relative to `out_dir`.
pub fn write_batch(batch: &DataBatch, out_dir: &Path) -> Result<BatchDescriptor, CorpusError> {
    let (token_file, doc_index, text_sidecar) = batch_file_names(batch.batch_id);
    io::atomic_write(&out_dir.join(&token_file), &encode_tokens(batch.tokens()))?;
    let index: Vec<IndexRecord> = batch
        .documents
        .iter()
        .map(|d| IndexRecord {
            doc_id: d.doc_id.clone(),
            batch_id: batch.batch_id,
            token_start: d.token_start,
            token_end: d.token_end,
        })
        .collect();
    io::write_jsonl(&out_dir.join(&doc_index), &index)?;
    let texts: Vec<TextRecord> = batch
        .documents
        .iter()
        .map(|d| TextRecord {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
        })
        .collect();
    io::write_jsonl(&out_dir.join(&text_sidecar), &texts)?;
    Ok(BatchDescriptor {
        batch_id: batch.batch_id,
        token_file,
        token_count: batch.token_count(),
        doc_index,
        text_sidecar,
    })
}

/// Writes every batch and a manifest describing them into `out_dir`.
pub fn write_corpus(
    template: &CorpusManifest,
    batches: &[DataBatch],
    out_dir: &Path,
) -> Result<CorpusManifest, CorpusError> {
    let mut manifest = CorpusManifest {
        batches: Vec::with_capacity(batches.len()),
        root: out_dir.to_path_buf(),
        ..template.clone()
    };
    for batch in batches {
        manifest.batches.push(write_batch(batch, out_dir)?);
    }
    manifest.write(&out_dir.join("manifest.toml"))?;
    Ok(manifest)
}
