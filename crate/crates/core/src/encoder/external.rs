//! Externally computed embeddings: JSON-lines `{"id": .., "vector": [..]}`.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::data::{read_jsonl, DataError};
use crate::linalg::Vector;

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("line {line}: vector for `{id}` has dim {found}, expected {expected}")]
    DimMismatch {
        line: usize,
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: vector for `{id}` is empty or non-finite")]
    InvalidVector { line: usize, id: String },
}

#[derive(Deserialize)]
struct Record {
    id: String,
    vector: Vec<f64>,
}

/// Id → vector map with a uniform dimension.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    vectors: HashMap<String, Vector>,
}

impl ExternalEmbeddingSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in file order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.vectors.get(id)
    }
}

pub fn load_external_embeddings(path: &Path) -> Result<ExternalEmbeddingSet, ExternalError> {
    let mut set = ExternalEmbeddingSet::default();
    let mut failure = None;
    read_jsonl(path, |line, rec: Record| {
        if failure.is_some() {
            return Ok(());
        }
        let Ok(v) = Vector::new(rec.vector) else {
            failure = Some(ExternalError::InvalidVector { line, id: rec.id });
            return Ok(());
        };
        if set.ids.is_empty() {
            set.dim = v.dim();
        } else if v.dim() != set.dim {
            failure = Some(ExternalError::DimMismatch {
                line,
                id: rec.id,
                expected: set.dim,
                found: v.dim(),
            });
            return Ok(());
        }
        if set.vectors.contains_key(&rec.id) {
            failure = Some(ExternalError::DuplicateId { line, id: rec.id });
            return Ok(());
        }
        set.ids.push(rec.id.clone());
        set.vectors.insert(rec.id, v);
        Ok(())
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(set),
    }
}
