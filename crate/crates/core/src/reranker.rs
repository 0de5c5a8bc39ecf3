//! Retrieval and PRF listwise reranking with one encoder.
//!
//! Reranking builds a listwise prompt from the top `k_prf` retrieved
//! candidates, encodes it once, and rescores up to `rerank_depth` candidates
//! by cosine against that single embedding. Document embeddings come from
//! the index and are reused, never re-encoded.
//!
//! The sliding-window baseline is modelled as a cost and permutation harness:
//! windows of `window` candidates are processed back to front with stride
//! `step`, one encoder pass each.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_jsonl, Corpus, DataError, Query};
use crate::encoder::Encoder;
use crate::index::{EmbeddingIndex, IndexError};
use crate::linalg;
use crate::metrics::{self, group_by_query, to_run_entries, MetricsError, Qrels, RunEntry};
use crate::prompts::{self, PromptTemplate};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("no candidates to rerank")]
    EmptyCandidates,
    #[error("no embedding for candidate `{0}`")]
    MissingEmbedding(String),
    #[error("no text for candidate `{0}`")]
    MissingDocument(String),
    #[error("run contains unknown query `{0}`")]
    UnknownQuery(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrfConfig {
    /// Candidates placed in the prompt.
    pub k_prf: usize,
    /// Candidates rescored; the rest are dropped.
    pub rerank_depth: usize,
    pub template: PromptTemplate,
}

impl Default for PrfConfig {
    fn default() -> Self {
        PrfConfig {
            k_prf: 20,
            rerank_depth: 100,
            template: PromptTemplate::default(),
        }
    }
}

impl PrfConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.rerank_depth == 0 || self.k_prf > self.rerank_depth {
            return Err(RerankError::Config(format!(
                "need 0 <= k_prf ({}) <= rerank_depth ({}) and rerank_depth >= 1",
                self.k_prf, self.rerank_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlidingWindowConfig {
    pub window: usize,
    pub step: usize,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        SlidingWindowConfig {
            window: 20,
            step: 10,
        }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.step == 0 || self.step > self.window {
            return Err(RerankError::Config(format!(
                "need 1 <= step ({}) <= window ({})",
                self.step, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub encoder_forward_passes: u64,
    pub prompt_tokens_processed: u64,
    pub doc_embeddings_reused: u64,
}

/// One line of a cost-report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub qid: String,
    pub forward_passes: u64,
    pub prompt_tokens: u64,
    pub reused_embeddings: u64,
    pub wall_ms: f64,
}

impl CostRecord {
    pub fn new(qid: impl Into<String>, cost: CostReport, wall_ms: f64) -> Self {
        CostRecord {
            qid: qid.into(),
            forward_passes: cost.encoder_forward_passes,
            prompt_tokens: cost.prompt_tokens_processed,
            reused_embeddings: cost.doc_embeddings_reused,
            wall_ms,
        }
    }
}

pub fn write_cost_report(path: &Path, records: &[CostRecord]) -> Result<(), DataError> {
    write_jsonl(path, records)
}

/// Number of windows: `1` if `n <= window`, else `1 + ceil((n - window) / step)`.
pub fn window_count(n: usize, cfg: &SlidingWindowConfig) -> usize {
    if n <= cfg.window {
        1
    } else {
        1 + (n - cfg.window).div_ceil(cfg.step)
    }
}

/// Encoder cost of reranking `n` candidates with the sliding-window baseline.
pub fn sliding_window_cost(n: usize, cfg: &SlidingWindowConfig, avg_doc_tokens: u64) -> CostReport {
    assert!(n >= 1, "need at least one candidate");
    let windows = window_count(n, cfg) as u64;
    let slots = windows * n.min(cfg.window) as u64;
    CostReport {
        encoder_forward_passes: windows,
        prompt_tokens_processed: slots * avg_doc_tokens,
        doc_embeddings_reused: 0,
    }
}

/// `(start, end)` of each window in processing order: the last window first,
/// moving toward the front by `step`, the final window clamped at 0.
pub fn window_spans(n: usize, cfg: &SlidingWindowConfig) -> Vec<(usize, usize)> {
    if n <= cfg.window {
        return vec![(0, n)];
    }
    let mut spans = Vec::new();
    let mut start = n - cfg.window;
    loop {
        spans.push((start, start + cfg.window));
        if start == 0 {
            break;
        }
        start = start.saturating_sub(cfg.step);
    }
    spans
}

/// Runs the sliding-window baseline with an arbitrary window ranker.
///
/// `rank_window` receives the items of one window and returns their new order
/// as indices into that slice. `tokens_of` gives the prompt tokens an item
/// costs. Each window counts as one forward pass.
pub fn sliding_window_rerank<T, R, C>(
    items: &[T],
    cfg: &SlidingWindowConfig,
    mut rank_window: R,
    tokens_of: C,
) -> Result<(Vec<T>, CostReport), RerankError>
where
    T: Clone,
    R: FnMut(&[T]) -> Vec<usize>,
    C: Fn(&T) -> u64,
{
    cfg.validate()?;
    if items.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let mut order: Vec<T> = items.to_vec();
    let mut cost = CostReport::default();
    for (start, end) in window_spans(order.len(), cfg) {
        let window = &order[start..end];
        let perm = rank_window(window);
        let mut check = perm.clone();
        check.sort_unstable();
        if check != (0..window.len()).collect::<Vec<_>>() {
            return Err(RerankError::Config(
                "window ranker returned a non-permutation".into(),
            ));
        }
        cost.encoder_forward_passes += 1;
        cost.prompt_tokens_processed += window.iter().map(&tokens_of).sum::<u64>();
        let reordered: Vec<T> = perm.iter().map(|&i| window[i].clone()).collect();
        order[start..end].clone_from_slice(&reordered);
    }
    Ok((order, cost))
}

/// Result of reranking one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub ranked: Vec<(String, f64)>,
    pub cost: CostReport,
    pub wall_ms: f64,
}

/// Sorts descending by score, ties by doc id ascending.
fn sort_scored(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Query encoding for the first stage.
pub fn retrieve(
    query: &Query,
    instruction: &str,
    k: usize,
    encoder: &Encoder,
    index: &EmbeddingIndex,
) -> Result<Vec<(String, f64)>, RerankError> {
    let q = encoder.encode_query(query, instruction);
    Ok(index.top_k(&q, k)?)
}

/// Everything PRF reranking reads: the shared encoder, reusable document
/// embeddings, and document texts for the prompt.
#[derive(Debug, Clone, Copy)]
pub struct Reranker<'a> {
    pub encoder: &'a Encoder,
    pub index: &'a EmbeddingIndex,
    pub corpus: &'a Corpus,
    pub config: &'a PrfConfig,
}

impl<'a> Reranker<'a> {
    pub fn new(
        encoder: &'a Encoder,
        index: &'a EmbeddingIndex,
        corpus: &'a Corpus,
        config: &'a PrfConfig,
    ) -> Self {
        Reranker {
            encoder,
            index,
            corpus,
            config,
        }
    }

    /// Reranks `candidates` (given in retrieval order).
    pub fn rerank(
        &self,
        query: &Query,
        candidates: &[(String, f64)],
    ) -> Result<Reranked, RerankError> {
        let started = Instant::now();
        self.config.validate()?;
        if candidates.is_empty() {
            return Err(RerankError::EmptyCandidates);
        }
        let pool = &candidates[..candidates.len().min(self.config.rerank_depth)];
        let prf_docs = pool
            .iter()
            .take(self.config.k_prf)
            .map(|(id, _)| {
                self.corpus
                    .get(id)
                    .cloned()
                    .ok_or_else(|| RerankError::MissingDocument(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let prompt = self.config.template.prompt(prf_docs, query.clone());
        let tokens = prompts::prompt_tokens(&prompt, &self.config.template, self.encoder);
        let q = self.encoder.encode_tokens(&tokens);
        let q = self.index.unit_query(&q)?;
        let mut ranked = pool
            .iter()
            .map(|(id, _)| {
                let row = self
                    .index
                    .unit_embedding(id)
                    .ok_or_else(|| RerankError::MissingEmbedding(id.clone()))?;
                Ok((id.clone(), linalg::dot_unchecked(&q, row)))
            })
            .collect::<Result<Vec<_>, RerankError>>()?;
        sort_scored(&mut ranked);
        let cost = CostReport {
            encoder_forward_passes: 1,
            prompt_tokens_processed: tokens.len() as u64 + 1,
            doc_embeddings_reused: ranked.len() as u64,
        };
        Ok(Reranked {
            ranked,
            cost,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Reranks every query of a first-stage run. Queries are processed in
    /// parallel; output keeps run order.
    pub fn rerank_run(
        &self,
        queries: &[Query],
        run: &[RunEntry],
    ) -> Result<(Vec<RunEntry>, Vec<CostRecord>), RerankError> {
        let by_id: std::collections::HashMap<&str, &Query> =
            queries.iter().map(|q| (q.id.as_str(), q)).collect();
        let groups = group_by_query(run);
        let results = groups
            .par_iter()
            .map(|(qid, entries)| {
                let q = by_id
                    .get(qid.as_str())
                    .ok_or_else(|| RerankError::UnknownQuery(qid.clone()))?;
                let cands: Vec<(String, f64)> = entries
                    .iter()
                    .map(|e| (e.doc_id.clone(), e.score))
                    .collect();
                let out = self.rerank(q, &cands)?;
                Ok((
                    to_run_entries(qid, &out.ranked),
                    CostRecord::new(qid.clone(), out.cost, out.wall_ms),
                ))
            })
            .collect::<Result<Vec<_>, RerankError>>()?;
        let mut entries = Vec::with_capacity(run.len());
        let mut costs = Vec::with_capacity(results.len());
        for (e, c) in results {
            entries.extend(e);
            costs.push(c);
        }
        Ok((entries, costs))
    }

    /// Retrieve `k_retrieve` candidates with the plain query embedding, then
    /// rerank them.
    pub fn end_to_end(
        &self,
        query: &Query,
        instruction: &str,
        k_retrieve: usize,
    ) -> Result<(Vec<RunEntry>, Reranked), RerankError> {
        let candidates = retrieve(query, instruction, k_retrieve, self.encoder, self.index)?;
        let out = self.rerank(query, &candidates)?;
        Ok((to_run_entries(&query.id, &out.ranked), out))
    }
}

/// Convenience wrapper around [`Reranker::rerank`].
pub fn prf_rerank(
    query: &Query,
    candidates: &[(String, f64)],
    config: &PrfConfig,
    encoder: &Encoder,
    index: &EmbeddingIndex,
    corpus: &Corpus,
) -> Result<Reranked, RerankError> {
    Reranker::new(encoder, index, corpus, config).rerank(query, candidates)
}

/// First-stage run for all queries (parallel, deterministic order).
pub fn retrieve_run(
    queries: &[Query],
    instruction: &str,
    k: usize,
    encoder: &Encoder,
    index: &EmbeddingIndex,
) -> Result<Vec<RunEntry>, RerankError> {
    let per_query = queries
        .par_iter()
        .map(|q| retrieve(q, instruction, k, encoder, index).map(|r| to_run_entries(&q.id, &r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Retrieve-then-rerank for a query set.
pub fn end_to_end(
    queries: &[Query],
    instruction: &str,
    k_retrieve: usize,
    reranker: &Reranker<'_>,
) -> Result<Vec<RunEntry>, RerankError> {
    let first = retrieve_run(
        queries,
        instruction,
        k_retrieve,
        reranker.encoder,
        reranker.index,
    )?;
    Ok(reranker.rerank_run(queries, &first)?.0)
}

/// Mean NDCG of first-stage retrieval and of PRF reranking over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineScores {
    pub retrieval: f64,
    pub rerank: f64,
}

/// Indexes `docs`, retrieves `k_retrieve` per query, reranks, and scores
/// both runs at `ndcg_k`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_pipeline(
    encoder: &Encoder,
    docs: &[crate::data::Document],
    queries: &[Query],
    qrels: &Qrels,
    instruction: &str,
    k_retrieve: usize,
    prf: &PrfConfig,
    ndcg_k: usize,
) -> Result<PipelineScores, RerankError> {
    let index = EmbeddingIndex::build(docs, encoder)?;
    let corpus = Corpus::new(docs.to_vec())
        .map_err(|id| RerankError::Config(format!("duplicate document `{id}`")))?;
    let first = retrieve_run(queries, instruction, k_retrieve, encoder, &index)?;
    let (reranked, _) = Reranker::new(encoder, &index, &corpus, prf).rerank_run(queries, &first)?;
    Ok(PipelineScores {
        retrieval: metrics::mean_ndcg(&first, qrels, ndcg_k)?,
        rerank: metrics::mean_ndcg(&reranked, qrels, ndcg_k)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k_prf: usize,
    pub ndcg: f64,
}

/// Mean NDCG@`ndcg_k` of PRF reranking over `first_stage` for each prompt size.
/// Sizes above the configured depth are clamped to it.
#[allow(clippy::too_many_arguments)]
pub fn prf_size_sweep(
    queries: &[Query],
    first_stage: &[RunEntry],
    sizes: &[usize],
    base: &PrfConfig,
    encoder: &Encoder,
    index: &EmbeddingIndex,
    corpus: &Corpus,
    qrels: &Qrels,
    ndcg_k: usize,
) -> Result<Vec<SweepPoint>, RerankError> {
    sizes
        .iter()
        .map(|&k_prf| {
            let cfg = PrfConfig {
                k_prf: k_prf.min(base.rerank_depth),
                ..base.clone()
            };
            let (run, _) =
                Reranker::new(encoder, index, corpus, &cfg).rerank_run(queries, first_stage)?;
            Ok(SweepPoint {
                k_prf,
                ndcg: metrics::mean_ndcg(&run, qrels, ndcg_k)?,
            })
        })
        .collect()
}

/// Mean score at each rank position over queries, after sorting each query's
/// scores high to low. Output length is the shortest list, capped at
/// `max_positions`.
pub fn score_distribution(
    score_lists: &[Vec<f64>],
    max_positions: usize,
) -> Result<Vec<f64>, RerankError> {
    if score_lists.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let len = score_lists
        .iter()
        .map(Vec::len)
        .min()
        .unwrap()
        .min(max_positions);
    let mut sums = vec![0.0; len];
    for list in score_lists {
        let mut sorted = list.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (acc, s) in sums.iter_mut().zip(&sorted) {
            *acc += s;
        }
    }
    let n = score_lists.len() as f64;
    let mut out: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    // Division can break exact monotonicity only through rounding ties; clamp.
    for i in 1..out.len() {
        if out[i] > out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    Ok(out)
}

/// Reranking scores grouped per query, in run order.
pub fn rerank_scores(run: &[RunEntry]) -> Vec<Vec<f64>> {
    group_by_query(run)
        .into_iter()
        .map(|(_, e)| e.into_iter().map(|x| x.score).collect())
        .collect()
}
