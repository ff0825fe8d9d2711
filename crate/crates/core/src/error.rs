use std::io;

use thiserror::Error;

/// Errors raised across the attack laboratory.
#[derive(Debug, Error)]
pub enum LsfError {
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("bad magic bytes in {0} file")]
    BadMagic(&'static str),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension product overflows: {0:?}")]
    DimOverflow([u32; 4]),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("query budget exhausted after {used} queries")]
    BudgetExhausted { used: u64 },
    #[error("style search failed after {queries} queries")]
    StyleSearchFailed { queries: u64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LsfError {
    /// Process exit status for the command-line tool: 2 invariant
    /// violation, 3 budget exhausted, 4 bad input, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            LsfError::Invariant(_) | LsfError::NonFinite(_) => 2,
            LsfError::BudgetExhausted { .. } => 3,
            LsfError::StyleSearchFailed { .. } => 1,
            _ => 4,
        }
    }
}

pub type Result<T, E = LsfError> = std::result::Result<T, E>;
