// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by the linear algebra, model, steering, editing,
/// oracle and harness layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands have incompatible shapes.
    #[error("dimension mismatch in {op}: left {left}, right {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A sample has zero variance or too few points.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Weight file does not start with the expected magic bytes.
    #[error("bad magic: expected \"S2E1\", found {0:?}")]
    BadMagic([u8; 4]),

    /// Weight file ended before a tensor was fully read.
    #[error("truncated tensor `{tensor}`: expected {expected} bytes, {available} available")]
    Truncated {
        tensor: String,
        expected: usize,
        available: usize,
    },

    /// A tensor's shape disagrees with the model configuration.
    #[error("shape mismatch for `{tensor}`: expected {expected}, found {found}")]
    ShapeMismatch {
        tensor: String,
        expected: String,
        found: String,
    },

    /// Model configuration is internally inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Token id outside the vocabulary.
    #[error("token id {token} at position {position} is out of range (vocab size {vocab_size})")]
    TokenOutOfRange {
        token: u32,
        position: usize,
        vocab_size: usize,
    },

    /// Sequence longer than the model's context.
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    /// Empty token sequence where at least one token is required.
    #[error("empty token sequence")]
    EmptySequence,

    /// Component address outside the model.
    #[error("invalid component {0}")]
    InvalidComponent(String),

    /// Probe dataset violates its invariants.
    #[error("invalid probe dataset: {0}")]
    InvalidDataset(String),

    /// A steering vector has zero norm where a direction is needed.
    #[error("degenerate steering vector at {0}")]
    DegenerateSteeringVector(String),

    /// `W^T v` vanishes: the component cannot sense the steering direction.
    #[error("component insensitive to direction: W^T v = 0")]
    InsensitiveComponent,

    /// Hyperparameter outside its valid domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// No masked positions are available to average over.
    #[error("no masked positions for {0}")]
    NoMaskedPositions(String),

    /// Activation trace does not cover what the caller asked for.
    #[error("missing trace coverage: {0}")]
    MissingTraceCoverage(String),

    /// Power iteration did not meet its tolerance.
    #[error("power iteration did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },

    /// Every configuration of a search was vetoed.
    #[error("no viable configuration: all {0} evaluated configurations were vetoed")]
    NoViableConfiguration(usize),

    /// Malformed auxiliary file (vectors, plans, traces, configs).
    #[error("invalid file {path}: {reason}")]
    InvalidFile { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Self::Dimension {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
