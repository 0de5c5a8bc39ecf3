//! Exact cosine index over document embeddings.
//!
//! File layout (little-endian): `"E2IX"`, u32 version (1), u32 n, u32 dim,
//! then per document a u16 byte length and the UTF-8 id, then n·dim f64
//! values row-major.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::Document;
use crate::encoder::{Encoder, ExternalEmbeddingSet};
use crate::linalg::{self, Vector};

const MAGIC: &[u8; 4] = b"E2IX";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index must contain at least one document")]
    Empty,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("external embeddings have no vector for `{0}`")]
    MissingEmbedding(String),
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("embedding for `{0}` has zero norm")]
    ZeroNorm(String),
    #[error("query embedding has zero norm")]
    ZeroNormQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("document id longer than 65535 bytes")]
    IdTooLong,
    #[error("bad magic bytes {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated index file: need at least {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("document id is not valid UTF-8")]
    InvalidId,
    #[error("non-finite value in stored embedding")]
    NonFinite,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Document ids with their embeddings, in insertion order.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
    unit_rows: Vec<f64>,
    position: HashMap<String, usize>,
}

impl PartialEq for EmbeddingIndex {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.dim == other.dim
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingIndex {
    pub fn from_vectors(entries: Vec<(String, Vector)>) -> Result<Self, IndexError> {
        let dim = entries.first().ok_or(IndexError::Empty)?.1.dim();
        let mut ids = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        let mut unit_rows = Vec::with_capacity(entries.len() * dim);
        let mut position = HashMap::with_capacity(entries.len());
        for (id, v) in entries {
            if v.dim() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
            let unit = linalg::normalized(&v).map_err(|_| IndexError::ZeroNorm(id.clone()))?;
            if position.insert(id.clone(), ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            rows.extend_from_slice(&v);
            unit_rows.extend(unit);
            ids.push(id);
        }
        Ok(EmbeddingIndex {
            ids,
            dim,
            rows,
            unit_rows,
            position,
        })
    }

    /// Encodes every document (in parallel, results kept in input order).
    pub fn build(docs: &[Document], encoder: &Encoder) -> Result<Self, IndexError> {
        if docs.is_empty() {
            return Err(IndexError::Empty);
        }
        let mut seen = HashMap::with_capacity(docs.len());
        for d in docs {
            if seen.insert(d.id.as_str(), ()).is_some() {
                return Err(IndexError::DuplicateId(d.id.clone()));
            }
        }
        let vectors: Vec<Vector> = docs
            .par_iter()
            .map(|d| encoder.encode_document(d))
            .collect();
        Self::from_vectors(docs.iter().map(|d| d.id.clone()).zip(vectors).collect())
    }

    /// Uses externally supplied vectors verbatim.
    pub fn build_external(
        docs: &[Document],
        set: &ExternalEmbeddingSet,
    ) -> Result<Self, IndexError> {
        let entries = docs
            .iter()
            .map(|d| {
                set.get(&d.id)
                    .map(|v| (d.id.clone(), v.clone()))
                    .ok_or_else(|| IndexError::MissingEmbedding(d.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_vectors(entries)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embedding(&self, id: &str) -> Option<&[f64]> {
        self.position
            .get(id)
            .map(|&i| &self.rows[i * self.dim..(i + 1) * self.dim])
    }

    pub(crate) fn unit_embedding(&self, id: &str) -> Option<&[f64]> {
        self.position
            .get(id)
            .map(|&i| &self.unit_rows[i * self.dim..(i + 1) * self.dim])
    }

    /// Unit-normalizes a query; the dot product of the result with a stored
    /// unit row equals [`linalg::cosine`] bit for bit.
    pub(crate) fn unit_query(&self, query: &[f64]) -> Result<Vec<f64>, IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        linalg::normalized(query).map_err(|_| IndexError::ZeroNormQuery)
    }

    /// The `min(k, n)` highest cosine scores, descending, ties by id ascending.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q = self.unit_query(query)?;
        let mut scored: Vec<(usize, f64)> = self
            .unit_rows
            .chunks_exact(self.dim)
            .map(|row| linalg::dot_unchecked(&q, row))
            .enumerate()
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IndexError> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows.len() * 8 + self.ids.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for id in &self.ids {
            let len = u16::try_from(id.len()).map_err(|_| IndexError::IdTooLong)?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for x in &self.rows {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(IndexError::BadMagic(
                bytes.iter().take(4).copied().collect(),
            ));
        }
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(IndexError::Truncated {
                    expected,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(HEADER_LEN)?;
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(IndexError::Version(version));
        }
        let n = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        if n == 0 {
            return Err(IndexError::Empty);
        }
        let mut at = HEADER_LEN;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            need(at + 2)?;
            let len = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
            at += 2;
            need(at + len)?;
            let id =
                std::str::from_utf8(&bytes[at..at + len]).map_err(|_| IndexError::InvalidId)?;
            ids.push(id.to_string());
            at += len;
        }
        let expected = at + n * dim * 8;
        need(expected)?;
        if bytes.len() > expected {
            return Err(IndexError::TrailingBytes(bytes.len() - expected));
        }
        let values: Vec<f64> = bytes[at..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let entries = ids
            .into_iter()
            .zip(values.chunks_exact(dim.max(1)))
            .map(|(id, row)| {
                Vector::new(row.to_vec())
                    .map(|v| (id, v))
                    .map_err(|_| IndexError::NonFinite)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_vectors(entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
