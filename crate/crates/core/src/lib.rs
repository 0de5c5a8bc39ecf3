//! One encoder for both retrieval and listwise reranking.
//!
//! Retrieval ranks documents by cosine similarity to a query embedding.
//! Reranking encodes a listwise prompt built from the top retrieved
//! documents once and rescores candidates by cosine similarity to that
//! embedding, reusing the stored document embeddings.

pub mod data;
pub mod encoder;
pub mod index;
pub mod labels;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod prompts;
pub mod reranker;
pub mod rng;
pub mod tokenizer;
pub mod trainer;

pub use data::{Corpus, Document, Query};
pub use encoder::{Encoder, EncoderParams};
pub use index::EmbeddingIndex;
pub use labels::RankingLabel;
pub use linalg::Vector;
pub use losses::LossConfig;
pub use metrics::{Qrels, RunEntry};
pub use prompts::{ListwisePrompt, PromptTemplate};
pub use reranker::{CostReport, PrfConfig, SlidingWindowConfig};
pub use tokenizer::TokenizerConfig;
pub use trainer::{Stage, StageConfig, TrainingInstance};
