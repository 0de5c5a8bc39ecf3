//! Hashing tokenizer for the reference encoder.

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const DEFAULT_VOCAB_SIZE: u32 = 8192;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub vocab_size: u32,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            lowercase: true,
        }
    }
}

impl TokenizerConfig {
    pub fn with_vocab(vocab_size: u32) -> Self {
        assert!(vocab_size >= 2, "vocab_size must be at least 2");
        TokenizerConfig {
            vocab_size,
            ..Default::default()
        }
    }

    /// The end-of-sequence id, never produced by hashing.
    pub fn eos_id(&self) -> TokenId {
        self.vocab_size - 1
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.token_id(w)).collect()
    }

    pub fn token_id(&self, word: &str) -> TokenId {
        let h = if self.lowercase {
            fnv1a64(word.to_lowercase().as_bytes())
        } else {
            fnv1a64(word.as_bytes())
        };
        (h % u64::from(self.vocab_size - 1)) as TokenId
    }
}

pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<TokenId> {
    cfg.tokenize(text)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}
