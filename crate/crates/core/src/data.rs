//! Corpus and query ingestion, plus the shared JSON-lines plumbing.
//!
//! Records are `{"id": .., "text": ..}`. BEIR dumps use `_id` and an optional
//! `title`; those are accepted as-is, with the title joined to the text by a
//! single space.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: empty id")]
    EmptyId { path: PathBuf, line: usize },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Documents in ingestion order with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Fails with the offending id if ids repeat.
    pub fn new(docs: Vec<Document>) -> Result<Self, String> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(d.id.clone());
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    #[serde(rename = "_id")]
    beir_id: Option<serde_json::Value>,
    title: Option<String>,
    text: Option<String>,
}

fn id_string(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Calls `f(line_number, record)` for every non-blank line of a JSON-lines file.
pub fn read_jsonl<T, F>(path: &Path, mut f: F) -> Result<(), DataError>
where
    T: DeserializeOwned,
    F: FnMut(usize, T) -> Result<(), DataError>,
{
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, record)?;
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

fn read_id_text(path: &Path) -> Result<Vec<(String, String)>, DataError> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    read_jsonl(path, |line, rec: RawRecord| {
        let id = rec
            .id
            .or(rec.beir_id)
            .ok_or(DataError::MissingField {
                path: path.to_path_buf(),
                line,
                field: "id",
            })
            .and_then(|v| {
                id_string(v).ok_or_else(|| DataError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: "id must be a string or number".into(),
                })
            })?;
        if id.is_empty() {
            return Err(DataError::EmptyId {
                path: path.to_path_buf(),
                line,
            });
        }
        let text = rec.text.ok_or(DataError::MissingField {
            path: path.to_path_buf(),
            line,
            field: "text",
        })?;
        let text = match rec.title {
            Some(title) if !title.is_empty() => format!("{title} {text}"),
            _ => text,
        };
        if seen.insert(id.clone(), ()).is_some() {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
        out.push((id, text));
        Ok(())
    })?;
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, DataError> {
    Ok(read_id_text(path)?
        .into_iter()
        .map(|(id, text)| Document { id, text })
        .collect())
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>, DataError> {
    Ok(read_id_text(path)?
        .into_iter()
        .map(|(id, text)| Query { id, text })
        .collect())
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), DataError> {
    write_jsonl(path, docs)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<(), DataError> {
    write_jsonl(path, queries)
}
