//! Command implementations for the `e2rank` binary.
//!
//! Each command reads its inputs, calls into `e2rank` and writes results.
//! Human-readable output goes to the writer passed to [`run`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use e2rank::data::{read_corpus, read_jsonl, read_queries, write_jsonl, Corpus};
use e2rank::encoder::{
    load_external_embeddings, read_checkpoint, write_checkpoint, Encoder, EncoderParams,
};
use e2rank::index::EmbeddingIndex;
use e2rank::labels::{self, labeling_accuracy, LabelError, LabelRecord};
use e2rank::metrics::{self, read_qrels, read_run, write_run};
use e2rank::prompts::{PromptTemplate, DEFAULT_INSTRUCTION};
use e2rank::reranker::{
    self, prf_size_sweep, retrieve_run, score_distribution, sliding_window_cost, window_count,
    write_cost_report, PrfConfig, Reranker, SlidingWindowConfig,
};
use e2rank::tokenizer::DEFAULT_VOCAB_SIZE;
use e2rank::trainer::synthetic::{write_synthetic, STAGE1_FILE, STAGE2_FILE};
use e2rank::trainer::{
    generate_synthetic, read_instances, train_stage1, train_stage2, write_curve, Stage,
    StageConfig, SyntheticCorpusSpec,
};

pub const DEFAULT_SYNTH_SEED: u64 = 42;
pub const DEFAULT_TRAIN_SEED: u64 = 0;
pub const DEFAULT_INIT_SEED: u64 = 7;
pub const RUN_TAG: &str = "e2rank";

#[derive(Debug, Parser)]
#[command(
    name = "e2rank",
    version,
    about = "Embedding retrieval and PRF listwise reranking"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, queries, qrels and training instances.
    GenSynth(GenSynthArgs),
    /// Train the reference encoder (stage 1 or 2).
    Train(TrainArgs),
    /// Build an embedding index for a corpus.
    Embed(EmbedArgs),
    /// First-stage retrieval into a run file.
    Retrieve(RetrieveArgs),
    /// PRF listwise reranking of a run file.
    Rerank(RerankArgs),
    /// Mean NDCG@k of a run against qrels.
    Eval(EvalArgs),
    /// Rerank NDCG@k as a function of the prompt size.
    SweepPrf(SweepArgs),
    /// Mean score at each rank position of a run.
    ScoreDist(ScoreDistArgs),
    /// Encoder cost of the sliding-window baseline.
    WindowCost(WindowCostArgs),
    /// Parse permutation outputs into label files.
    ParseLabels(ParseLabelsArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Synthetic corpus settings as `key = value` lines; omitted keys keep their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed from `--spec`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// Directory from `gen-synth`, or an instance JSON-lines file.
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` training config; omitted keys keep the stage defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting checkpoint; a fresh encoder is initialized without one.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_INIT_SEED)]
    pub init_seed: u64,
    #[arg(long, default_value_t = e2rank::encoder::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE as usize)]
    pub vocab: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(
        long,
        required_unless_present = "external",
        conflicts_with = "external"
    )]
    pub ckpt: Option<PathBuf>,
    /// Precomputed `{"id", "embedding"}` lines instead of the encoder.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value = DEFAULT_INSTRUCTION)]
    pub instruction: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrfArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// First-stage run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    /// Section-format template; the built-in chat template without one.
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub prf: PrfArgs,
    #[arg(long, default_value_t = 20)]
    pub k_prf: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cost_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Also print one line per query.
    #[arg(long)]
    pub per_query: bool,
    /// Write the metrics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub prf: PrfArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,20,50,100")]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ScoreDistArgs {
    /// Reranked run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub positions: usize,
}

#[derive(Debug, Args)]
pub struct WindowCostArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    #[arg(long, default_value_t = 10)]
    pub step: usize,
    #[arg(long, default_value_t = 1)]
    pub avg_doc_tokens: u64,
}

#[derive(Debug, Args)]
pub struct ParseLabelsArgs {
    /// `{"qid", "text", "gold"?}` lines; `gold` is the 1-based index of the
    /// annotated positive.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Print counts and labeling accuracy.
    #[arg(long)]
    pub report: bool,
}

/// Number of threads from `E2RANK_THREADS`; `0` means sequential.
pub fn threads_from_env(value: Option<&str>) -> Result<Option<usize>> {
    match value {
        None => Ok(None),
        Some(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("E2RANK_THREADS: `{v}` is not a non-negative integer"))?;
            Ok(Some(n.max(1)))
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Embed(a) => embed(&a, out),
        Command::Retrieve(a) => retrieve(&a, out),
        Command::Rerank(a) => rerank(&a, out),
        Command::Eval(a) => eval(&a, out),
        Command::SweepPrf(a) => sweep(&a, out),
        Command::ScoreDist(a) => score_dist(&a, out),
        Command::WindowCost(a) => window_cost(&a, out),
        Command::ParseLabels(a) => parse_labels(&a, out),
    }
}

fn path_ctx(flag: &str, path: &Path) -> String {
    format!("--{flag} {}", path.display())
}

fn load_encoder(ckpt: &Path) -> Result<Encoder> {
    let params = read_checkpoint(ckpt).with_context(|| path_ctx("ckpt", ckpt))?;
    Ok(Encoder::new(params))
}

fn load_template(path: Option<&Path>) -> Result<PromptTemplate> {
    match path {
        Some(p) => PromptTemplate::load(p).with_context(|| path_ctx("template", p)),
        None => Ok(PromptTemplate::default()),
    }
}

pub fn gen_synth(a: &GenSynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticCorpusSpec::load(p).with_context(|| path_ctx("spec", p))?,
        None => SyntheticCorpusSpec {
            seed: DEFAULT_SYNTH_SEED,
            ..SyntheticCorpusSpec::default()
        },
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    writeln!(out, "seed = {}", spec.seed)?;
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| path_ctx("out", &a.out))?;
    write_synthetic(&a.out, &data).with_context(|| path_ctx("out", &a.out))?;
    writeln!(
        out,
        "{} documents, {} training queries, {} held-out queries, {} stage 1 and {} stage 2 instances",
        data.corpus.len(),
        data.train_queries.len(),
        data.heldout_queries.len(),
        data.stage1.len(),
        data.stage2.len()
    )?;
    Ok(())
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let stage = match a.stage {
        StageArg::One => Stage::One,
        StageArg::Two => Stage::Two,
    };
    let mut cfg = match &a.config {
        Some(p) => StageConfig::load(p, stage).with_context(|| path_ctx("config", p))?,
        None => StageConfig::for_stage(stage),
    };
    cfg.seed = a.seed.unwrap_or(if a.config.is_some() {
        cfg.seed
    } else {
        DEFAULT_TRAIN_SEED
    });
    writeln!(out, "seed = {}", cfg.seed)?;
    let data_path = if a.data.is_dir() {
        a.data.join(match stage {
            Stage::One => STAGE1_FILE,
            Stage::Two => STAGE2_FILE,
        })
    } else {
        a.data.clone()
    };
    let instances = read_instances(&data_path).with_context(|| path_ctx("data", &data_path))?;
    let params = match &a.init {
        Some(p) => read_checkpoint(p).with_context(|| path_ctx("init", p))?,
        None => {
            writeln!(out, "init_seed = {}", a.init_seed)?;
            EncoderParams::init(a.vocab, a.dim, a.init_seed)
        }
    };
    let outcome = match stage {
        Stage::One => train_stage1(&instances, &cfg, params)?,
        Stage::Two => train_stage2(&instances, &cfg, params)?,
    };
    write_checkpoint(&outcome.params, &a.out).with_context(|| path_ctx("out", &a.out))?;
    if let Some(c) = &a.curve {
        write_curve(c, &outcome.curve).with_context(|| path_ctx("curve", c))?;
    }
    if let (Some(first), Some(last)) = (outcome.curve.first(), outcome.curve.last()) {
        writeln!(
            out,
            "{} steps, combined loss {} -> {}",
            outcome.curve.len(),
            first.combined,
            last.combined
        )?;
    }
    Ok(())
}

pub fn embed(a: &EmbedArgs, out: &mut dyn Write) -> Result<()> {
    let docs = read_corpus(&a.corpus).with_context(|| path_ctx("corpus", &a.corpus))?;
    let index = match (&a.ckpt, &a.external) {
        (Some(ckpt), _) => EmbeddingIndex::build(&docs, &load_encoder(ckpt)?)?,
        (None, Some(ext)) => {
            let set = load_external_embeddings(ext).with_context(|| path_ctx("external", ext))?;
            EmbeddingIndex::build_external(&docs, &set)?
        }
        (None, None) => bail!("one of --ckpt or --external is required"),
    };
    index
        .save(&a.out)
        .with_context(|| path_ctx("out", &a.out))?;
    writeln!(
        out,
        "indexed {} documents, dim {}",
        index.len(),
        index.dim()
    )?;
    Ok(())
}

fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    EmbeddingIndex::load(path).with_context(|| path_ctx("index", path))
}

pub fn retrieve(a: &RetrieveArgs, out: &mut dyn Write) -> Result<()> {
    let index = load_index(&a.index)?;
    let encoder = load_encoder(&a.ckpt)?;
    let queries = read_queries(&a.queries).with_context(|| path_ctx("queries", &a.queries))?;
    let run = retrieve_run(&queries, &a.instruction, a.k, &encoder, &index)?;
    write_run(&a.out, &run, RUN_TAG).with_context(|| path_ctx("out", &a.out))?;
    writeln!(
        out,
        "retrieved {} entries for {} queries",
        run.len(),
        queries.len()
    )?;
    Ok(())
}

struct PrfInputs {
    index: EmbeddingIndex,
    encoder: Encoder,
    corpus: Corpus,
    queries: Vec<e2rank::Query>,
    run: Vec<metrics::RunEntry>,
    template: PromptTemplate,
}

fn load_prf_inputs(a: &PrfArgs) -> Result<PrfInputs> {
    let docs = read_corpus(&a.corpus).with_context(|| path_ctx("corpus", &a.corpus))?;
    let corpus = Corpus::new(docs)
        .map_err(|id| anyhow::anyhow!("duplicate document id `{id}`"))
        .with_context(|| path_ctx("corpus", &a.corpus))?;
    Ok(PrfInputs {
        index: load_index(&a.index)?,
        encoder: load_encoder(&a.ckpt)?,
        corpus,
        queries: read_queries(&a.queries).with_context(|| path_ctx("queries", &a.queries))?,
        run: read_run(&a.run).with_context(|| path_ctx("run", &a.run))?,
        template: load_template(a.template.as_deref())?,
    })
}

pub fn rerank(a: &RerankArgs, out: &mut dyn Write) -> Result<()> {
    let inputs = load_prf_inputs(&a.prf)?;
    let cfg = PrfConfig {
        k_prf: a.k_prf,
        rerank_depth: a.prf.depth,
        template: inputs.template.clone(),
    };
    let reranker = Reranker::new(&inputs.encoder, &inputs.index, &inputs.corpus, &cfg);
    let (run, costs) = reranker.rerank_run(&inputs.queries, &inputs.run)?;
    write_run(&a.out, &run, RUN_TAG).with_context(|| path_ctx("out", &a.out))?;
    if let Some(p) = &a.cost_report {
        write_cost_report(p, &costs).with_context(|| path_ctx("cost-report", p))?;
    }
    let passes: u64 = costs.iter().map(|c| c.forward_passes).sum();
    writeln!(
        out,
        "reranked {} queries with {} encoder forward passes",
        costs.len(),
        passes
    )?;
    Ok(())
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let run = read_run(&a.run).with_context(|| path_ctx("run", &a.run))?;
    let qrels = read_qrels(&a.qrels).with_context(|| path_ctx("qrels", &a.qrels))?;
    let per_query = metrics::per_query_ndcg(&run, &qrels, a.k);
    let mean = metrics::mean_ndcg(&run, &qrels, a.k)?;
    if a.per_query {
        for (q, v) in &per_query {
            writeln!(out, "{q}\tndcg@{}\t{v:.6}", a.k)?;
        }
    }
    writeln!(out, "ndcg@{}\t{mean:.6}", a.k)?;
    if let Some(p) = &a.out {
        let json = serde_json::json!({
            "metric": format!("ndcg@{}", a.k),
            "mean": mean,
            "queries": per_query.len(),
            "per_query": per_query,
        });
        fs::write(p, serde_json::to_string_pretty(&json)? + "\n")
            .with_context(|| path_ctx("out", p))?;
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let inputs = load_prf_inputs(&a.prf)?;
    let qrels = read_qrels(&a.qrels).with_context(|| path_ctx("qrels", &a.qrels))?;
    let base = PrfConfig {
        k_prf: 0,
        rerank_depth: a.prf.depth,
        template: inputs.template.clone(),
    };
    let points = prf_size_sweep(
        &inputs.queries,
        &inputs.run,
        &a.sizes,
        &base,
        &inputs.encoder,
        &inputs.index,
        &inputs.corpus,
        &qrels,
        a.k,
    )?;
    writeln!(out, "k_prf\tndcg@{}", a.k)?;
    for p in points {
        writeln!(out, "{}\t{:.6}", p.k_prf, p.ndcg)?;
    }
    Ok(())
}

pub fn score_dist(a: &ScoreDistArgs, out: &mut dyn Write) -> Result<()> {
    let run = read_run(&a.run).with_context(|| path_ctx("run", &a.run))?;
    let dist = score_distribution(&reranker::rerank_scores(&run), a.positions)?;
    writeln!(out, "position\tmean_score")?;
    for (i, s) in dist.iter().enumerate() {
        writeln!(out, "{}\t{s:.6}", i + 1)?;
    }
    Ok(())
}

pub fn window_cost(a: &WindowCostArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SlidingWindowConfig {
        window: a.window,
        step: a.step,
    };
    cfg.validate()?;
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let cost = sliding_window_cost(a.n, &cfg, a.avg_doc_tokens);
    writeln!(out, "windows\t{}", window_count(a.n, &cfg))?;
    writeln!(out, "forward_passes\t{}", cost.encoder_forward_passes)?;
    writeln!(out, "prompt_tokens\t{}", cost.prompt_tokens_processed)?;
    writeln!(out, "reused_embeddings\t{}", cost.doc_embeddings_reused)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawLabelLine {
    qid: String,
    text: String,
    #[serde(default)]
    gold: Option<usize>,
}

/// Outcome counts of label parsing.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct LabelReport {
    pub total: usize,
    pub parsed: usize,
    pub no_indices: usize,
    pub duplicate: usize,
    pub out_of_range: usize,
    pub missing: usize,
    pub accuracy: Option<f64>,
}

pub fn parse_labels(a: &ParseLabelsArgs, out: &mut dyn Write) -> Result<()> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let mut records = Vec::new();
    let mut report = LabelReport::default();
    let mut with_gold = (Vec::new(), Vec::new());
    read_jsonl(&a.input, |line, raw: RawLabelLine| {
        report.total += 1;
        match labels::parse_permutation(&raw.text, a.k) {
            Ok(label) => {
                report.parsed += 1;
                if let Some(g) = raw.gold {
                    with_gold.0.push(label.clone());
                    with_gold.1.push(g);
                }
                records.push(LabelRecord {
                    qid: raw.qid,
                    permutation: label,
                });
            }
            Err(e) => {
                log::warn!("line {line}: qid `{}`: dropped: {e}", raw.qid);
                match e {
                    LabelError::NoIndices => report.no_indices += 1,
                    LabelError::Duplicate(_) => report.duplicate += 1,
                    LabelError::OutOfRange { .. } => report.out_of_range += 1,
                    _ => report.missing += 1,
                }
            }
        }
        Ok(())
    })
    .with_context(|| path_ctx("in", &a.input))?;
    if !with_gold.0.is_empty() {
        report.accuracy = Some(labeling_accuracy(&with_gold.0, &with_gold.1)?);
    }
    write_jsonl(&a.out, &records).with_context(|| path_ctx("out", &a.out))?;
    if a.report {
        writeln!(out, "total\t{}", report.total)?;
        writeln!(out, "parsed\t{}", report.parsed)?;
        writeln!(out, "no_indices\t{}", report.no_indices)?;
        writeln!(out, "duplicate\t{}", report.duplicate)?;
        writeln!(out, "out_of_range\t{}", report.out_of_range)?;
        writeln!(out, "missing\t{}", report.missing)?;
        match report.accuracy {
            Some(acc) => writeln!(out, "golden_positive_accuracy\t{acc:.6}")?,
            None => writeln!(out, "golden_positive_accuracy\tn/a")?,
        }
    }
    Ok(())
}
