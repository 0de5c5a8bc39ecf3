//! The reference encoder.
//!
//! A token sequence is terminated with the EOS id, the token-table rows of the
//! whole sequence are averaged (EOS included) and the average is multiplied by
//! a square projection. The output is the embedding used for every query,
//! document and listwise prompt. Outputs are not normalized.

mod checkpoint;
mod external;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError,
};
pub use external::{load_external_embeddings, ExternalEmbeddingSet, ExternalError};

use crate::data::{Document, Query};
use crate::linalg::Vector;
use crate::rng;
use crate::tokenizer::{TokenId, TokenizerConfig};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_MAX_DOC_TOKENS: usize = 1024;
pub const INIT_SCALE: f64 = 0.1;

/// Token table `E` (V×D) and projection `W` (D×D), both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab: usize,
    dim: usize,
    pub token_table: Vec<f64>,
    pub projection: Vec<f64>,
}

impl EncoderParams {
    pub fn from_parts(
        vocab: usize,
        dim: usize,
        token_table: Vec<f64>,
        projection: Vec<f64>,
    ) -> Result<Self, String> {
        if vocab < 2 || dim == 0 {
            return Err(format!("invalid shape V={vocab} D={dim}"));
        }
        if token_table.len() != vocab * dim || projection.len() != dim * dim {
            return Err(format!(
                "parameter lengths {}/{} do not match V={vocab} D={dim}",
                token_table.len(),
                projection.len()
            ));
        }
        if token_table
            .iter()
            .chain(&projection)
            .any(|x| !x.is_finite())
        {
            return Err("non-finite parameter".into());
        }
        Ok(EncoderParams {
            vocab,
            dim,
            token_table,
            projection,
        })
    }

    /// Uniform in [-0.1, 0.1) from a seeded PCG stream: token table first,
    /// then projection, both row-major.
    pub fn init(vocab: usize, dim: usize, seed: u64) -> Self {
        assert!(vocab >= 2 && dim >= 1);
        let mut r = rng::seeded(seed);
        let token_table = (0..vocab * dim)
            .map(|_| rng::symmetric(&mut r, INIT_SCALE))
            .collect();
        let projection = (0..dim * dim)
            .map(|_| rng::symmetric(&mut r, INIT_SCALE))
            .collect();
        EncoderParams {
            vocab,
            dim,
            token_table,
            projection,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eos_id(&self) -> TokenId {
        (self.vocab - 1) as TokenId
    }

    pub fn row(&self, token: TokenId) -> &[f64] {
        let t = token as usize;
        &self.token_table[t * self.dim..(t + 1) * self.dim]
    }

    /// Mean of the token rows of `tokens ++ [EOS]`.
    pub(crate) fn pool(&self, tokens: &[TokenId]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for &t in tokens.iter().chain(std::iter::once(&self.eos_id())) {
            for (acc, x) in h.iter_mut().zip(self.row(t)) {
                *acc += x;
            }
        }
        let n = (tokens.len() + 1) as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    }

    /// `W · h`.
    pub(crate) fn project(&self, h: &[f64]) -> Vec<f64> {
        self.projection
            .chunks_exact(self.dim)
            .map(|row| crate::linalg::dot_unchecked(row, h))
            .collect()
    }

    pub fn encode(&self, tokens: &[TokenId]) -> Vector {
        Vector::from_raw(self.project(&self.pool(tokens)))
    }
}

pub fn encode(tokens: &[TokenId], params: &EncoderParams) -> Vector {
    params.encode(tokens)
}

/// Parameters plus the text-side configuration needed to embed raw text.
#[derive(Debug, Clone)]
pub struct Encoder {
    params: EncoderParams,
    tokenizer: TokenizerConfig,
    pub max_doc_tokens: usize,
}

impl Encoder {
    pub fn new(params: EncoderParams) -> Self {
        let tokenizer = TokenizerConfig::with_vocab(params.vocab() as u32);
        Encoder {
            params,
            tokenizer,
            max_doc_tokens: DEFAULT_MAX_DOC_TOKENS,
        }
    }

    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.tokenizer.lowercase = lowercase;
        self
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn into_params(self) -> EncoderParams {
        self.params
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn document_tokens(&self, doc: &Document) -> Vec<TokenId> {
        let mut t = self.tokenizer.tokenize(&doc.text);
        t.truncate(self.max_doc_tokens);
        t
    }

    pub fn query_tokens(&self, query: &Query, instruction: &str) -> Vec<TokenId> {
        self.tokenizer
            .tokenize(&format!("{instruction} {}", query.text))
    }

    pub fn encode_tokens(&self, tokens: &[TokenId]) -> Vector {
        self.params.encode(tokens)
    }

    pub fn encode_text(&self, text: &str) -> Vector {
        self.params.encode(&self.tokenizer.tokenize(text))
    }

    pub fn encode_document(&self, doc: &Document) -> Vector {
        self.params.encode(&self.document_tokens(doc))
    }

    pub fn encode_query(&self, query: &Query, instruction: &str) -> Vector {
        self.params.encode(&self.query_tokens(query, instruction))
    }
}
