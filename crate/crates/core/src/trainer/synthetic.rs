//! Seeded topic-clustered corpus with graded relevance and training instances.
//!
//! Every topic owns a disjoint set of topic words; all topics share a pool
//! of background words. A document of tier `g` (0-based, `levels` tiers)
//! holds `round((g + 1) / (levels + 1) * doc_length)` topic words and
//! background filler. A document's grade for a query is
//! `ceil(overlap * levels / doc_length)`, where overlap counts its tokens in
//! the query topic's word set. Queries mix topic words with noise words from
//! one other topic.

use std::collections::HashSet;
use std::path::Path;

use crate::data::{write_corpus, write_queries, DataError, Document, Query};
use crate::labels::label_from_scores;
use crate::metrics::{write_qrels, MetricsError, Qrels};
use crate::prompts::PromptTemplate;
use crate::rng::{self, Rng};
use crate::tokenizer::TokenizerConfig;

use super::{write_instances, TrainError, TrainingInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    pub queries_per_topic: usize,
    /// Held out from training, taken from the end of the topic round-robin.
    pub heldout_queries: usize,
    /// Topic words plus background words.
    pub vocab_words: usize,
    /// Shared filler pool; the rest of the vocabulary is split evenly
    /// across topics.
    pub background_words: usize,
    pub doc_length: usize,
    pub levels: usize,
    pub query_words: usize,
    pub noise_words: usize,
    /// Stage I instances per query.
    pub stage1_pairs: usize,
    pub stage2_negatives: usize,
    pub instruction: String,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_topics: 20,
            docs_per_topic: 50,
            queries_per_topic: 8,
            heldout_queries: 60,
            vocab_words: 800,
            background_words: 400,
            doc_length: 20,
            levels: 4,
            query_words: 3,
            noise_words: 2,
            stage1_pairs: 8,
            stage2_negatives: 15,
            instruction: "search".into(),
            seed: 42,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn topic_words(&self) -> usize {
        self.vocab_words.saturating_sub(self.background_words) / self.n_topics.max(1)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if [
            self.n_topics,
            self.docs_per_topic,
            self.queries_per_topic,
            self.vocab_words,
            self.doc_length,
            self.levels,
            self.query_words,
            self.background_words,
            self.stage1_pairs,
        ]
        .contains(&0)
        {
            return bad("sizes must be positive");
        }
        if self.n_topics < 2 {
            return bad("need at least two topics");
        }
        if self.topic_words() < self.query_words.max(self.noise_words) {
            return bad("too few words per topic for the query length");
        }
        if self.docs_per_topic < self.levels {
            return bad("docs_per_topic must cover every tier");
        }
        if self.heldout_queries >= self.n_topics * self.queries_per_topic {
            return bad("no training queries left after the held-out split");
        }
        if self.stage2_negatives == 0 {
            return bad("stage2_negatives must be positive");
        }
        Ok(())
    }

    /// `key = value` lines over the defaults; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut s = SyntheticCorpusSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| TrainError::ConfigLine {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "instruction" {
                s.instruction = value.to_string();
                continue;
            }
            let n: u64 = value.parse().map_err(|e| err(format!("`{key}`: {e}")))?;
            let slot = match key {
                "n_topics" => &mut s.n_topics,
                "docs_per_topic" => &mut s.docs_per_topic,
                "queries_per_topic" => &mut s.queries_per_topic,
                "heldout_queries" => &mut s.heldout_queries,
                "vocab_words" => &mut s.vocab_words,
                "background_words" => &mut s.background_words,
                "doc_length" => &mut s.doc_length,
                "levels" => &mut s.levels,
                "query_words" => &mut s.query_words,
                "noise_words" => &mut s.noise_words,
                "stage1_pairs" => &mut s.stage1_pairs,
                "stage2_negatives" => &mut s.stage2_negatives,
                "seed" => {
                    s.seed = n;
                    continue;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            };
            *slot = n as usize;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<Document>,
    pub train_queries: Vec<Query>,
    pub heldout_queries: Vec<Query>,
    /// Judgments for the held-out queries.
    pub qrels: Qrels,
    pub train_qrels: Qrels,
    pub stage1: Vec<TrainingInstance>,
    /// Stage I style instances for the held-out queries, for measuring
    /// generalization of the contrastive objective.
    pub heldout_stage1: Vec<TrainingInstance>,
    pub stage2: Vec<TrainingInstance>,
    /// Word set of each topic.
    pub topics: Vec<Vec<String>>,
    /// Topic of each query, by id.
    pub query_topics: Vec<(String, usize)>,
    pub instruction: String,
}

impl SyntheticData {
    /// Template whose zero-document prompt equals the query embedding input.
    pub fn template(&self) -> PromptTemplate {
        PromptTemplate::plain(self.instruction.clone())
    }
}

/// Names `count` words whose token ids collide neither with each other nor
/// with `reserved`.
fn distinct_words(count: usize, reserved: &HashSet<u32>) -> Vec<String> {
    let tok = TokenizerConfig::default();
    let mut used = reserved.clone();
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        let w = format!("w{k}");
        if used.insert(tok.token_id(&w)) {
            out.push(w);
        }
        k += 1;
    }
    out
}

fn sample_without_replacement(r: &mut Rng, n: usize, take: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng::shuffle(r, &mut idx);
    idx.truncate(take);
    idx
}

fn other_topic(r: &mut Rng, n_topics: usize, t: usize) -> usize {
    (t + 1 + rng::below(r, n_topics - 1)) % n_topics
}

pub fn tier_topic_count(tier: usize, spec: &SyntheticCorpusSpec) -> usize {
    let c =
        ((tier + 1) as f64 / (spec.levels + 1) as f64 * spec.doc_length as f64).round() as usize;
    c.clamp(1, spec.doc_length)
}

pub fn grade_for_overlap(overlap: usize, spec: &SyntheticCorpusSpec) -> u32 {
    (overlap * spec.levels).div_ceil(spec.doc_length) as u32
}

pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<SyntheticData, TrainError> {
    spec.validate()?;
    let tok = TokenizerConfig::default();
    let reserved: HashSet<u32> = tok.tokenize(&spec.instruction).into_iter().collect();
    let per_topic = spec.topic_words();
    let n_background = spec.background_words;
    let words = distinct_words(per_topic * spec.n_topics + n_background, &reserved);
    let topics: Vec<Vec<String>> = words[..per_topic * spec.n_topics]
        .chunks(per_topic)
        .map(|c| c.to_vec())
        .collect();
    let background = &words[per_topic * spec.n_topics..];

    let mut r = rng::seeded(rng::derive(spec.seed, 0));
    let mut corpus = Vec::with_capacity(spec.n_topics * spec.docs_per_topic);
    // (topic, tier, overlap) parallel to corpus.
    let mut meta = Vec::with_capacity(corpus.capacity());
    for (t, topic) in topics.iter().enumerate() {
        for j in 0..spec.docs_per_topic {
            let tier = j % spec.levels;
            let c = tier_topic_count(tier, spec);
            let mut text: Vec<&str> = (0..c)
                .map(|_| topic[rng::below(&mut r, per_topic)].as_str())
                .collect();
            text.extend(
                (c..spec.doc_length)
                    .map(|_| background[rng::below(&mut r, background.len())].as_str()),
            );
            rng::shuffle(&mut r, &mut text);
            corpus.push(Document::new(format!("t{t:02}-d{j:03}"), text.join(" ")));
            meta.push((t, tier, c));
        }
    }
    let doc_index = |t: usize, j: usize| t * spec.docs_per_topic + j;
    let top_tier: Vec<usize> = (0..spec.docs_per_topic)
        .filter(|j| j % spec.levels == spec.levels - 1)
        .collect();
    let lower_tiers: Vec<usize> = (0..spec.docs_per_topic)
        .filter(|j| j % spec.levels != spec.levels - 1)
        .collect();

    let mut r = rng::seeded(rng::derive(spec.seed, 1));
    let mut queries = Vec::new();
    let mut qinfo = Vec::new(); // (topic, noise topic, k)
    for k in 0..spec.queries_per_topic {
        for (t, topic) in topics.iter().enumerate() {
            let u = other_topic(&mut r, spec.n_topics, t);
            let mut text: Vec<&str> =
                sample_without_replacement(&mut r, per_topic, spec.query_words)
                    .into_iter()
                    .map(|i| topic[i].as_str())
                    .collect();
            text.extend(
                sample_without_replacement(&mut r, per_topic, spec.noise_words)
                    .into_iter()
                    .map(|i| topics[u][i].as_str()),
            );
            rng::shuffle(&mut r, &mut text);
            queries.push(Query::new(format!("q{t:02}-{k}"), text.join(" ")));
            qinfo.push((t, u, k));
        }
    }

    let n_train = queries.len() - spec.heldout_queries;
    let mut qrels = Qrels::new();
    let mut train_qrels = Qrels::new();
    for (i, (q, &(t, _, _))) in queries.iter().zip(&qinfo).enumerate() {
        let target = if i < n_train {
            &mut train_qrels
        } else {
            &mut qrels
        };
        for (d, &(dt, _, c)) in corpus.iter().zip(&meta) {
            if dt == t {
                target.insert(q.id.clone(), d.id.clone(), grade_for_overlap(c, spec));
            }
        }
    }

    // Stage I pairs: distinct top-tier positives, negatives from the noise
    // topic and from random other topics in turn.
    let pairs =
        |r: &mut Rng, q: &Query, (t, u, k): (usize, usize, usize)| -> Vec<TrainingInstance> {
            (0..spec.stage1_pairs)
                .map(|p| {
                    let neg_topic = if p % 2 == 0 {
                        u
                    } else {
                        other_topic(r, spec.n_topics, t)
                    };
                    let neg = doc_index(neg_topic, top_tier[rng::below(r, top_tier.len())]);
                    TrainingInstance {
                        query: q.clone(),
                        instruction: spec.instruction.clone(),
                        positive: corpus[doc_index(t, top_tier[(k + p) % top_tier.len()])].clone(),
                        negatives: vec![corpus[neg].clone()],
                        label: None,
                    }
                })
                .collect()
        };
    let mut r = rng::seeded(rng::derive(spec.seed, 3));
    let stage1: Vec<TrainingInstance> = queries[..n_train]
        .iter()
        .zip(&qinfo)
        .flat_map(|(q, &info)| pairs(&mut r, q, info))
        .collect();
    let heldout_stage1: Vec<TrainingInstance> = queries[n_train..]
        .iter()
        .zip(&qinfo[n_train..])
        .flat_map(|(q, &info)| pairs(&mut r, q, info))
        .collect();

    let mut r = rng::seeded(rng::derive(spec.seed, 2));
    let mut stage2 = Vec::with_capacity(n_train);
    for (q, &(t, u, k)) in queries[..n_train].iter().zip(&qinfo) {
        let positive = corpus[doc_index(t, top_tier[k % top_tier.len()])].clone();

        let same = (spec.stage2_negatives * 2 / 3).min(lower_tiers.len());
        let mut negatives: Vec<usize> = sample_without_replacement(&mut r, lower_tiers.len(), same)
            .into_iter()
            .map(|i| doc_index(t, lower_tiers[i]))
            .collect();
        let mut seen: HashSet<usize> = negatives.iter().copied().collect();
        while negatives.len() < spec.stage2_negatives {
            let ot = if negatives.len() == same {
                u
            } else {
                other_topic(&mut r, spec.n_topics, t)
            };
            let d = doc_index(ot, rng::below(&mut r, spec.docs_per_topic));
            if seen.insert(d) {
                negatives.push(d);
            }
        }
        rng::shuffle(&mut r, &mut negatives);
        let overlap = |d: usize| {
            if meta[d].0 == t {
                meta[d].2 as f64
            } else {
                0.0
            }
        };
        let scores: Vec<f64> =
            std::iter::once(meta[doc_index(t, top_tier[k % top_tier.len()])].2 as f64)
                .chain(negatives.iter().map(|&d| overlap(d)))
                .collect();
        stage2.push(TrainingInstance {
            query: q.clone(),
            instruction: spec.instruction.clone(),
            positive,
            negatives: negatives.iter().map(|&d| corpus[d].clone()).collect(),
            label: Some(label_from_scores(&scores)),
        });
    }

    let query_topics = queries
        .iter()
        .zip(&qinfo)
        .map(|(q, i)| (q.id.clone(), i.0))
        .collect();
    let heldout_queries = queries.split_off(n_train);
    Ok(SyntheticData {
        corpus,
        train_queries: queries,
        heldout_queries,
        qrels,
        train_qrels,
        stage1,
        heldout_stage1,
        stage2,
        topics,
        query_topics,
        instruction: spec.instruction.clone(),
    })
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TRAIN_QUERIES_FILE: &str = "train_queries.jsonl";
pub const HELDOUT_QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels.tsv";
pub const TRAIN_QRELS_FILE: &str = "train_qrels.tsv";
pub const STAGE1_FILE: &str = "stage1.jsonl";
pub const STAGE2_FILE: &str = "stage2.jsonl";
pub const TEMPLATE_FILE: &str = "template.txt";

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Writes every artifact of `data` into `dir`, which must exist.
pub fn write_synthetic(dir: &Path, data: &SyntheticData) -> Result<(), WriteError> {
    write_corpus(&dir.join(CORPUS_FILE), &data.corpus)?;
    write_queries(&dir.join(TRAIN_QUERIES_FILE), &data.train_queries)?;
    write_queries(&dir.join(HELDOUT_QUERIES_FILE), &data.heldout_queries)?;
    write_qrels(&dir.join(QRELS_FILE), &data.qrels)?;
    write_qrels(&dir.join(TRAIN_QRELS_FILE), &data.train_qrels)?;
    write_instances(&dir.join(STAGE1_FILE), &data.stage1)?;
    write_instances(&dir.join(STAGE2_FILE), &data.stage2)?;
    let template = dir.join(TEMPLATE_FILE);
    std::fs::write(&template, data.template().to_text()).map_err(|source| WriteError::Io {
        path: template.display().to_string(),
        source,
    })
}
