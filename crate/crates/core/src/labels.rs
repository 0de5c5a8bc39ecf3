//! Ranking permutation labels in the `[4] > [2] > [1] > [3]` text form.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{read_jsonl, write_jsonl, DataError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("no bracketed indices found")]
    NoIndices,
    #[error("index [{0}] appears more than once")]
    Duplicate(usize),
    #[error("index [{index}] outside 1..={k}")]
    OutOfRange { index: String, k: usize },
    #[error("index [{0}] is missing")]
    Missing(usize),
    #[error("labels and gold indices differ in length ({labels} vs {gold})")]
    LengthMismatch { labels: usize, gold: usize },
    #[error("empty input")]
    Empty,
}

/// A permutation of candidate indices 1..=k, most relevant first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RankingLabel {
    permutation: Vec<usize>,
}

impl TryFrom<Vec<usize>> for RankingLabel {
    type Error = LabelError;

    fn try_from(v: Vec<usize>) -> Result<Self, LabelError> {
        RankingLabel::new(v)
    }
}

impl From<RankingLabel> for Vec<usize> {
    fn from(l: RankingLabel) -> Self {
        l.permutation
    }
}

impl RankingLabel {
    pub fn new(permutation: Vec<usize>) -> Result<Self, LabelError> {
        if permutation.is_empty() {
            return Err(LabelError::NoIndices);
        }
        let k = permutation.len();
        check_permutation(&permutation, k)?;
        Ok(RankingLabel { permutation })
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn k(&self) -> usize {
        self.permutation.len()
    }

    /// `ranks()[j-1]` is the rank of candidate `j` (1 = best).
    pub fn ranks(&self) -> Vec<u32> {
        let mut ranks = vec![0u32; self.permutation.len()];
        for (pos, &idx) in self.permutation.iter().enumerate() {
            ranks[idx - 1] = pos as u32 + 1;
        }
        ranks
    }

    pub fn top(&self) -> usize {
        self.permutation[0]
    }
}

fn check_permutation(perm: &[usize], k: usize) -> Result<(), LabelError> {
    let mut seen = vec![false; k];
    for &i in perm {
        if i == 0 || i > k {
            return Err(LabelError::OutOfRange {
                index: i.to_string(),
                k,
            });
        }
        if std::mem::replace(&mut seen[i - 1], true) {
            return Err(LabelError::Duplicate(i));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(LabelError::Missing(missing + 1));
    }
    Ok(())
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\s*(\d+)\s*\]").unwrap())
}

/// Extracts bracketed integers in order. Whitespace and other noise between
/// brackets is ignored; the result must be exactly a permutation of 1..=k.
pub fn parse_permutation(text: &str, k: usize) -> Result<RankingLabel, LabelError> {
    assert!(k >= 1, "k must be positive");
    let mut perm = Vec::new();
    for cap in bracket_re().captures_iter(text) {
        let raw = &cap[1];
        match raw.parse::<usize>() {
            Ok(i) if (1..=k).contains(&i) => perm.push(i),
            _ => {
                return Err(LabelError::OutOfRange {
                    index: raw.to_string(),
                    k,
                })
            }
        }
    }
    if perm.is_empty() {
        return Err(LabelError::NoIndices);
    }
    check_permutation(&perm, k)?;
    Ok(RankingLabel { permutation: perm })
}

pub fn format_permutation(label: &RankingLabel) -> String {
    label
        .permutation
        .iter()
        .map(|i| format!("[{i}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}

/// Fraction of labels whose first entry is the gold positive.
pub fn labeling_accuracy(
    labels: &[RankingLabel],
    gold_positive: &[usize],
) -> Result<f64, LabelError> {
    if labels.len() != gold_positive.len() {
        return Err(LabelError::LengthMismatch {
            labels: labels.len(),
            gold: gold_positive.len(),
        });
    }
    if labels.is_empty() {
        return Err(LabelError::Empty);
    }
    let hits = labels
        .iter()
        .zip(gold_positive)
        .filter(|(l, &g)| l.top() == g)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Indices sorted by score descending; ties keep the lower index first.
pub fn label_from_scores(scores: &[f64]) -> RankingLabel {
    assert!(!scores.is_empty(), "need at least one score");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    RankingLabel {
        permutation: idx.into_iter().map(|i| i + 1).collect(),
    }
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub qid: String,
    pub permutation: RankingLabel,
}

#[derive(Debug, Error)]
pub enum LabelFileError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("line {line}: qid `{qid}`: {source}")]
    Invalid {
        line: usize,
        qid: String,
        #[source]
        source: LabelError,
    },
}

#[derive(Deserialize)]
struct RawLabelRecord {
    qid: String,
    permutation: Vec<usize>,
}

/// Reads `{"qid", "permutation"}` lines and checks each permutation covers
/// exactly `candidates` indices.
pub fn read_labels(path: &Path, candidates: usize) -> Result<Vec<LabelRecord>, LabelFileError> {
    let mut out = Vec::new();
    let mut failure = None;
    read_jsonl(path, |line, raw: RawLabelRecord| {
        if failure.is_some() {
            return Ok(());
        }
        let checked = if raw.permutation.is_empty() {
            Err(LabelError::NoIndices)
        } else {
            check_permutation(&raw.permutation, candidates)
        };
        match checked {
            Ok(()) => out.push(LabelRecord {
                qid: raw.qid,
                permutation: RankingLabel {
                    permutation: raw.permutation,
                },
            }),
            Err(source) => {
                failure = Some(LabelFileError::Invalid {
                    line,
                    qid: raw.qid,
                    source,
                })
            }
        }
        Ok(())
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

pub fn write_labels(path: &Path, records: &[LabelRecord]) -> Result<(), DataError> {
    write_jsonl(path, records)
}
