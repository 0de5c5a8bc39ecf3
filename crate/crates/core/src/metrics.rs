//! NDCG@k evaluation and TREC run / qrels files.
//!
//! Gain is `2^rel − 1`, discount `log2(i + 1)`, and the ideal DCG is built
//! from every judged document of the query, not only the retrieved ones.
//! Retrieved documents without a judgment count as grade 0.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no query has a positive ideal DCG")]
    NoEvaluableQueries,
}

/// (query id, doc id) → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(qid.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
}

impl RunEntry {
    pub fn new(
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        rank: u32,
        score: f64,
    ) -> Self {
        RunEntry {
            query_id: query_id.into(),
            doc_id: doc_id.into(),
            rank,
            score,
        }
    }
}

/// Turns `(doc_id, score)` pairs already in ranked order into run entries.
pub fn to_run_entries(query_id: &str, ranked: &[(String, f64)]) -> Vec<RunEntry> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, (doc, score))| RunEntry::new(query_id, doc.clone(), i as u32 + 1, *score))
        .collect()
}

/// Entries grouped per query in first-appearance order, each sorted by rank.
pub fn group_by_query(run: &[RunEntry]) -> Vec<(String, Vec<RunEntry>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, Vec<RunEntry>> = HashMap::new();
    for e in run {
        groups
            .entry(e.query_id.as_str())
            .or_insert_with(|| {
                order.push(e.query_id.clone());
                Vec::new()
            })
            .push(e.clone());
    }
    order
        .into_iter()
        .map(|q| {
            let mut v = groups.remove(q.as_str()).unwrap();
            v.sort_by_key(|e| e.rank);
            (q, v)
        })
        .collect()
}

fn dcg(grades: impl Iterator<Item = u32>, k: usize) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

fn ideal_dcg(judged: Option<&BTreeMap<String, u32>>, k: usize) -> f64 {
    let mut grades: Vec<u32> = judged
        .map(|m| m.values().copied().collect())
        .unwrap_or_default();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    dcg(grades.into_iter(), k)
}

/// NDCG@k of one query's ranking. The entries are taken in rank order.
/// Returns 0 when the query has no positively graded judgment.
pub fn ndcg_at_k(run: &[RunEntry], qrels: &Qrels, k: usize) -> f64 {
    assert!(k >= 1);
    let Some(first) = run.first() else {
        return 0.0;
    };
    let qid = first.query_id.as_str();
    let idcg = ideal_dcg(qrels.query(qid), k);
    if idcg == 0.0 {
        return 0.0;
    }
    let mut order: Vec<&RunEntry> = run.iter().collect();
    order.sort_by_key(|e| e.rank);
    dcg(order.iter().map(|e| qrels.grade(qid, &e.doc_id)), k) / idcg
}

/// Per-query NDCG@k for every judged query with a positive ideal DCG.
/// Judged queries missing from the run score 0.
pub fn per_query_ndcg(run: &[RunEntry], qrels: &Qrels, k: usize) -> BTreeMap<String, f64> {
    let groups: HashMap<String, Vec<RunEntry>> = group_by_query(run).into_iter().collect();
    qrels
        .judgments
        .iter()
        .filter(|(_, judged)| ideal_dcg(Some(judged), k) > 0.0)
        .map(|(qid, _)| {
            let v = groups
                .get(qid)
                .map(|e| ndcg_at_k(e, qrels, k))
                .unwrap_or(0.0);
            (qid.clone(), v)
        })
        .collect()
}

/// Mean of [`per_query_ndcg`], summed in query-id order.
pub fn mean_ndcg(run: &[RunEntry], qrels: &Qrels, k: usize) -> Result<f64, MetricsError> {
    let per = per_query_ndcg(run, qrels, k);
    if per.is_empty() {
        return Err(MetricsError::NoEvaluableQueries);
    }
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> MetricsError {
    MetricsError::Malformed {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a 6-column TREC run (`qid Q0 docid rank score tag`).
///
/// Within each query, ranks are renumbered 1..n. If scores are not
/// non-increasing in rank order the query is re-ranked by score (descending,
/// ties by the original rank) and a warning is logged.
pub fn read_run(path: &Path) -> Result<Vec<RunEntry>, MetricsError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut raw = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(malformed(
                path,
                i + 1,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: u32 = cols[3]
            .parse()
            .map_err(|_| malformed(path, i + 1, format!("bad rank `{}`", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| malformed(path, i + 1, format!("bad score `{}`", cols[4])))?;
        raw.push(RunEntry::new(cols[0], cols[2], rank, score));
    }
    Ok(normalize_run(raw))
}

/// Applies the per-query ordering rules of [`read_run`].
pub fn normalize_run(run: Vec<RunEntry>) -> Vec<RunEntry> {
    let mut out = Vec::with_capacity(run.len());
    for (qid, mut entries) in group_by_query(&run) {
        let ordered = entries.windows(2).all(|w| w[0].score >= w[1].score);
        if !ordered {
            warn!("run for query `{qid}`: scores not non-increasing in rank order; re-ranking by score");
            entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.rank.cmp(&b.rank)));
        }
        for (i, e) in entries.iter_mut().enumerate() {
            e.rank = i as u32 + 1;
        }
        out.extend(entries);
    }
    out
}

pub fn format_run(run: &[RunEntry], tag: &str) -> String {
    let mut s = String::new();
    for e in run {
        s.push_str(&format!(
            "{} Q0 {} {} {} {}\n",
            e.query_id, e.doc_id, e.rank, e.score, tag
        ));
    }
    s
}

pub fn write_run(path: &Path, run: &[RunEntry], tag: &str) -> Result<(), MetricsError> {
    std::fs::write(path, format_run(run, tag)).map_err(|e| io_err(path, e))
}

/// Reads TREC qrels (`qid 0 docid grade`). The 3-column BEIR form
/// (`query-id corpus-id score`, optional header) is also accepted.
pub fn read_qrels(path: &Path) -> Result<Qrels, MetricsError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut qrels = Qrels::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (qid, doc, grade) = match cols.len() {
            4 => (cols[0], cols[2], cols[3]),
            3 => (cols[0], cols[1], cols[2]),
            n => {
                return Err(malformed(
                    path,
                    i + 1,
                    format!("expected 4 columns, found {n}"),
                ))
            }
        };
        let grade: i64 = match grade.parse() {
            Ok(g) => g,
            Err(_) if i == 0 && cols.len() == 3 => continue, // BEIR header
            Err(_) => return Err(malformed(path, i + 1, format!("bad grade `{grade}`"))),
        };
        if !(0..=30).contains(&grade) {
            return Err(malformed(
                path,
                i + 1,
                format!("grade {grade} outside 0..=30"),
            ));
        }
        qrels.insert(qid, doc, grade as u32);
    }
    Ok(qrels)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<(), MetricsError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, docs) in &qrels.judgments {
        for (doc, grade) in docs {
            writeln!(w, "{qid} 0 {doc} {grade}").map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}
