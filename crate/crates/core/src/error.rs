//! Error type shared across the codec.

use thiserror::Error;

/// Errors produced by any layer of the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variance must be strictly positive (dimension {index}: {value})")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("timestep {t} out of range [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("candidate cap {cap} exceeded at kl {kl_bits:.3} bits; re-chunk with a smaller target")]
    CandidateCapExceeded { cap: u64, kl_bits: f64 },

    #[error("tag index {index} out of range for vocabulary of size {vocab}")]
    TagOutOfRange { index: usize, vocab: usize },

    #[error("prompt has {count} tags; at most 255 fit the fixed-width count field")]
    PromptTooLong { count: usize },

    #[error("quantization index {index} exceeds alphabet bound ±32768")]
    QuantIndexOverflow { index: i64 },

    #[error("bit reader exhausted: needed {needed} bits, {available} left")]
    Truncated { needed: u64, available: u64 },

    #[error("section payload too large: {bits} bits")]
    SectionOverflow { bits: u64 },

    #[error("unknown section tag {tag} at byte offset {offset}")]
    UnknownSection { tag: u8, offset: usize },

    #[error("malformed stream at bit offset {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error("bad magic bytes (not a codec stream)")]
    BadMagic,

    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown schedule registry index {0}")]
    UnknownSchedule(u16),

    #[error("vocabulary hash mismatch: stream {stream:#018x}, local {local:#018x}")]
    VocabHashMismatch { stream: u64, local: u64 },

    #[error("decoder matrix is rank deficient (condition number {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stream not encodable at this configuration: {0}")]
    Unencodable(String),

    #[error("chain state hash mismatch: trailer {expected:#018x}, recomputed {actual:#018x}")]
    ChainHashMismatch { expected: u64, actual: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
