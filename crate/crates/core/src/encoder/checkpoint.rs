//! Checkpoint file: little-endian `"E2RK"`, u32 version (1), u32 V, u32 D,
//! V·D f64 token table, D·D f64 projection, both row-major.

use std::path::Path;

use thiserror::Error;

use super::EncoderParams;

pub(crate) const MAGIC: &[u8; 4] = b"E2RK";
pub(crate) const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic {
        found: Vec<u8>,
        expected: &'static [u8],
    },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated payload: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn save_checkpoint(params: &EncoderParams) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(HEADER_LEN + 8 * (params.token_table.len() + params.projection.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.vocab() as u32).to_le_bytes());
    out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    for x in params.token_table.iter().chain(&params.projection) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub(crate) fn read_f64s(bytes: &[u8], count: usize) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .take(count)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<EncoderParams, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: bytes.iter().take(4).copied().collect(),
            expected: MAGIC,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let vocab = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    let n_table = vocab * dim;
    let n_proj = dim * dim;
    let expected = HEADER_LEN + 8 * (n_table + n_proj);
    if bytes.len() < expected {
        return Err(CheckpointError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CheckpointError::TrailingBytes(bytes.len() - expected));
    }
    let payload = &bytes[HEADER_LEN..];
    let token_table = read_f64s(payload, n_table);
    let projection = read_f64s(&payload[8 * n_table..], n_proj);
    EncoderParams::from_parts(vocab, dim, token_table, projection).map_err(CheckpointError::Invalid)
}

pub fn write_checkpoint(params: &EncoderParams, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, save_checkpoint(params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParams, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_checkpoint(&bytes)
}
