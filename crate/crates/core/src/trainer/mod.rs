//! Two-stage training of the reference encoder with plain SGD.
//!
//! Stage I minimizes InfoNCE between plain query embeddings and documents.
//! Stage II adds RankNet between the listwise prompt embedding of an
//! instance's documents and each of those documents, weighted by `lambda`.

pub mod synthetic;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{read_jsonl, write_jsonl, DataError, Document, Query};
use crate::encoder::{Encoder, EncoderParams};
use crate::labels::RankingLabel;
use crate::losses::{
    evaluate_loss, loss_gradients, InfoNceGroup, LossBreakdown, LossConfig, LossError,
    RankNetConvention, RankNetGroup, ScoringBatch,
};
use crate::prompts::{self, PromptTemplate};
use crate::rng;
use crate::tokenizer::TokenId;

pub use synthetic::{generate_synthetic, SyntheticCorpusSpec, SyntheticData};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training instances")]
    Empty,
    #[error("instance {index}: no negatives")]
    NoNegatives { index: usize },
    #[error("instance {index}: missing ranking label")]
    MissingLabel { index: usize },
    #[error("instance {index}: label covers {found} documents, instance has {expected}")]
    LabelSize {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub query: Query,
    pub instruction: String,
    pub positive: Document,
    pub negatives: Vec<Document>,
    /// Permutation over `[positive, negatives..]`, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<RankingLabel>,
}

impl TrainingInstance {
    /// `[positive, negatives..]`, the order the label indexes.
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }
}

pub fn read_instances(path: &Path) -> Result<Vec<TrainingInstance>, DataError> {
    let mut out = Vec::new();
    read_jsonl(path, |_, inst: TrainingInstance| {
        out.push(inst);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[TrainingInstance]) -> Result<(), DataError> {
    write_jsonl(path, instances)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Order of an instance's documents inside its Stage II training prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptOrder {
    /// A fixed permutation per instance drawn from the seed.
    Shuffled,
    /// Label order, best first.
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub in_batch_negatives: bool,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// RankNet on the listwise prompt embedding; off scores the plain query.
    pub listwise: bool,
    pub prompt_order: PromptOrder,
    pub template: PromptTemplate,
}

/// The Stage I rate given alongside the other hyperparameters; the default
/// uses the main-text value instead.
pub const ALT_STAGE1_LEARNING_RATE: f64 = 2e-5;

impl StageConfig {
    pub fn stage1() -> Self {
        StageConfig {
            stage: Stage::One,
            batch_size: 512,
            learning_rate: 5e-6,
            epochs: 1,
            in_batch_negatives: false,
            warmup_fraction: 0.03,
            seed: 0,
            loss: LossConfig {
                lambda: 0.0,
                ..LossConfig::default()
            },
            listwise: true,
            prompt_order: PromptOrder::Shuffled,
            template: PromptTemplate::default(),
        }
    }

    pub fn stage2() -> Self {
        StageConfig {
            stage: Stage::Two,
            batch_size: 128,
            in_batch_negatives: true,
            loss: LossConfig::default(),
            ..Self::stage1()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::One => Self::stage1(),
            Stage::Two => Self::stage2(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.warmup_fraction >= 0.0 && self.warmup_fraction <= 1.0) {
            return Err(TrainError::Config(
                "warmup_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        self.loss.validate().map_err(TrainError::Config)
    }

    /// Reads `key = value` lines over the stage defaults. `#` starts a
    /// comment line. `template` is `default`, `plain`, or `plain:<instruction>`.
    pub fn parse(text: &str, stage: Stage) -> Result<Self, TrainError> {
        let mut cfg = Self::for_stage(stage);
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
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(format!("`{key}`: {e}")));
            let int = |v: &str| v.parse::<u64>().map_err(|e| err(format!("`{key}`: {e}")));
            let flag = |v: &str| match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(err(format!("`{key}`: expected true or false"))),
            };
            match key {
                "batch_size" => cfg.batch_size = int(value)? as usize,
                "learning_rate" => cfg.learning_rate = num(value)?,
                "epochs" => cfg.epochs = int(value)? as usize,
                "in_batch_negatives" => cfg.in_batch_negatives = flag(value)?,
                "warmup_fraction" => cfg.warmup_fraction = num(value)?,
                "seed" => cfg.seed = int(value)?,
                "tau_infonce" => cfg.loss.tau_infonce = num(value)?,
                "tau_ranknet" => cfg.loss.tau_ranknet = num(value)?,
                "lambda" => cfg.loss.lambda = num(value)?,
                "infonce_weight" => cfg.loss.infonce_weight = num(value)?,
                "ranknet_convention" => {
                    cfg.loss.convention = match value {
                        "standard" => RankNetConvention::Standard,
                        "literal" => RankNetConvention::Literal,
                        _ => {
                            return Err(err(
                                "`ranknet_convention`: expected standard or literal".into()
                            ))
                        }
                    }
                }
                "listwise" => cfg.listwise = flag(value)?,
                "prompt_order" => {
                    cfg.prompt_order = match value {
                        "shuffled" => PromptOrder::Shuffled,
                        "label" => PromptOrder::Label,
                        _ => return Err(err("`prompt_order`: expected shuffled or label".into())),
                    }
                }
                "template" => {
                    cfg.template = match value {
                        "default" => PromptTemplate::default(),
                        "plain" => PromptTemplate::plain(""),
                        v => match v.strip_prefix("plain:") {
                            Some(instr) => PromptTemplate::plain(instr.trim()),
                            None => {
                                return Err(err(
                                    "`template`: expected default, plain or plain:<text>".into(),
                                ))
                            }
                        },
                    }
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, stage: Stage) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, stage)
    }

    /// Loss actually optimized: Stage I never includes RankNet.
    fn effective_loss(&self) -> LossConfig {
        match self.stage {
            Stage::One => LossConfig {
                lambda: 0.0,
                ..self.loss
            },
            Stage::Two => self.loss,
        }
    }
}

/// Optimizer steps for `n` instances.
pub fn total_steps(n: usize, cfg: &StageConfig) -> usize {
    cfg.epochs * n.div_ceil(cfg.batch_size)
}

/// Linear warmup over the first `ceil(warmup_fraction * total)` steps, then
/// constant.
pub fn learning_rate_at(step: usize, total: usize, cfg: &StageConfig) -> f64 {
    let warmup = (cfg.warmup_fraction * total as f64).ceil() as usize;
    if warmup == 0 || step >= warmup {
        cfg.learning_rate
    } else {
        cfg.learning_rate * (step + 1) as f64 / warmup as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Loss before each step's update.
    pub curve: Vec<LossBreakdown>,
}

/// Pre-tokenized sequences for one instance.
struct Tokenized {
    query: Vec<TokenId>,
    docs: Vec<(String, Vec<TokenId>)>,
    prompt: Option<Vec<TokenId>>,
    ranks: Option<Vec<u32>>,
}

fn check_instances(data: &[TrainingInstance], need_labels: bool) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    for (index, inst) in data.iter().enumerate() {
        if inst.negatives.is_empty() {
            return Err(TrainError::NoNegatives { index });
        }
        if need_labels {
            let label = inst
                .label
                .as_ref()
                .ok_or(TrainError::MissingLabel { index })?;
            if label.k() != inst.negatives.len() + 1 {
                return Err(TrainError::LabelSize {
                    index,
                    expected: inst.negatives.len() + 1,
                    found: label.k(),
                });
            }
        }
    }
    Ok(())
}

fn tokenize_all(data: &[TrainingInstance], cfg: &StageConfig, encoder: &Encoder) -> Vec<Tokenized> {
    let order_stream = rng::derive(cfg.seed, u64::from(u32::MAX) + 1);
    data.iter()
        .enumerate()
        .map(|(i, inst)| {
            let docs: Vec<(String, Vec<TokenId>)> = inst
                .documents()
                .map(|d| (d.id.clone(), encoder.document_tokens(d)))
                .collect();
            let (prompt, ranks) = match (&inst.label, cfg.stage) {
                (Some(label), Stage::Two) => {
                    let all: Vec<&Document> = inst.documents().collect();
                    let order: Vec<usize> = match cfg.prompt_order {
                        PromptOrder::Shuffled => {
                            let mut o: Vec<usize> = (0..all.len()).collect();
                            rng::shuffle(
                                &mut rng::seeded(rng::derive(order_stream, i as u64)),
                                &mut o,
                            );
                            o
                        }
                        PromptOrder::Label => label.permutation().iter().map(|&j| j - 1).collect(),
                    };
                    let ordered = order.iter().map(|&j| all[j].clone()).collect();
                    let p = prompts::ListwisePrompt::new(
                        inst.instruction.clone(),
                        ordered,
                        inst.query.clone(),
                    );
                    (
                        Some(prompts::prompt_tokens(&p, &cfg.template, encoder)),
                        Some(label.ranks()),
                    )
                }
                _ => (None, None),
            };
            Tokenized {
                query: encoder.query_tokens(&inst.query, &inst.instruction),
                docs,
                prompt,
                ranks,
            }
        })
        .collect()
}

/// Builds the scoring graph for one batch. Documents are shared by id, so a
/// document seen by several instances is one sequence.
fn build_batch(items: &[&Tokenized], cfg: &StageConfig) -> ScoringBatch {
    let mut batch = ScoringBatch::default();
    let mut doc_seq: HashMap<&str, usize> = HashMap::new();
    let mut query_seq = Vec::with_capacity(items.len());
    let mut item_docs: Vec<Vec<usize>> = Vec::with_capacity(items.len());
    for t in items {
        query_seq.push(batch.sequences.len());
        batch.sequences.push(t.query.clone());
        let mut ids = Vec::with_capacity(t.docs.len());
        for (id, toks) in &t.docs {
            let idx = *doc_seq.entry(id.as_str()).or_insert_with(|| {
                batch.sequences.push(toks.clone());
                batch.sequences.len() - 1
            });
            ids.push(idx);
        }
        item_docs.push(ids);
    }

    for (i, docs) in item_docs.iter().enumerate() {
        let positive = docs[0];
        let mut negatives: Vec<usize> = Vec::new();
        let mut seen = vec![positive];
        for &d in &docs[1..] {
            if !seen.contains(&d) {
                seen.push(d);
                negatives.push(d);
            }
        }
        if cfg.in_batch_negatives {
            for (j, other) in item_docs.iter().enumerate() {
                if j == i {
                    continue;
                }
                for &d in other {
                    if !seen.contains(&d) {
                        seen.push(d);
                        negatives.push(d);
                    }
                }
            }
        }
        batch.infonce.push(InfoNceGroup {
            query: query_seq[i],
            positive,
            negatives,
        });
    }

    if cfg.stage == Stage::Two {
        for (i, t) in items.iter().enumerate() {
            let (Some(prompt), Some(ranks)) = (&t.prompt, &t.ranks) else {
                continue;
            };
            let query = if cfg.listwise {
                batch.sequences.push(prompt.clone());
                batch.sequences.len() - 1
            } else {
                query_seq[i]
            };
            batch.ranknet.push(RankNetGroup {
                query,
                docs: item_docs[i].clone(),
                ranks: ranks.clone(),
            });
        }
    }
    batch
}

fn train(
    data: &[TrainingInstance],
    cfg: &StageConfig,
    params: EncoderParams,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_instances(data, cfg.stage == Stage::Two)?;
    let loss = cfg.effective_loss();
    let encoder = Encoder::new(params);
    let tokenized = tokenize_all(data, cfg, &encoder);
    let mut params = encoder.into_params();
    let total = total_steps(data.len(), cfg);
    let mut curve = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng::shuffle(
            &mut rng::seeded(rng::derive(cfg.seed, epoch as u64)),
            &mut order,
        );
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Tokenized> = chunk.iter().map(|&i| &tokenized[i]).collect();
            let batch = build_batch(&items, cfg);
            let (values, grads) = loss_gradients(&batch, &params, &loss)?;
            let lr = learning_rate_at(step, total, cfg);
            for (p, g) in params.token_table.iter_mut().zip(&grads.token_table) {
                *p -= lr * g;
            }
            for (p, g) in params.projection.iter_mut().zip(&grads.projection) {
                *p -= lr * g;
            }
            curve.push(values);
            log::debug!(
                "step {step}: infonce {:.6} ranknet {:.6} combined {:.6}",
                values.infonce,
                values.ranknet,
                values.combined
            );
            step += 1;
        }
    }
    Ok(TrainOutcome { params, curve })
}

/// InfoNCE-only training on plain query embeddings.
pub fn train_stage1(
    data: &[TrainingInstance],
    cfg: &StageConfig,
    params: EncoderParams,
) -> Result<TrainOutcome, TrainError> {
    if cfg.stage != Stage::One {
        return Err(TrainError::Config(
            "train_stage1 needs a Stage I config".into(),
        ));
    }
    train(data, cfg, params)
}

/// Combined InfoNCE and listwise RankNet training.
pub fn train_stage2(
    data: &[TrainingInstance],
    cfg: &StageConfig,
    params: EncoderParams,
) -> Result<TrainOutcome, TrainError> {
    if cfg.stage != Stage::Two {
        return Err(TrainError::Config(
            "train_stage2 needs a Stage II config".into(),
        ));
    }
    train(data, cfg, params)
}

/// Loss of `params` over all of `data` as one batch, without updating.
pub fn evaluate(
    data: &[TrainingInstance],
    cfg: &StageConfig,
    params: &EncoderParams,
) -> Result<LossBreakdown, TrainError> {
    cfg.validate()?;
    check_instances(data, cfg.stage == Stage::Two)?;
    let encoder = Encoder::new(params.clone());
    let tokenized = tokenize_all(data, cfg, &encoder);
    let items: Vec<&Tokenized> = tokenized.iter().collect();
    Ok(evaluate_loss(
        &build_batch(&items, cfg),
        params,
        &cfg.effective_loss(),
    )?)
}

pub fn format_curve(curve: &[LossBreakdown]) -> String {
    let mut out = String::from("step,infonce,ranknet,combined\n");
    for (i, v) in curve.iter().enumerate() {
        writeln!(out, "{i},{},{},{}", v.infonce, v.ranknet, v.combined).unwrap();
    }
    out
}

pub fn write_curve(path: &Path, curve: &[LossBreakdown]) -> Result<(), TrainError> {
    std::fs::write(path, format_curve(curve)).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
