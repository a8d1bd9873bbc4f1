// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Result alias used throughout `ts-lens`.
pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("svd did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("linear system is numerically singular")]
    SingularSystem,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid period {period} for amplitude {amplitude}")]
    InvalidPeriod { amplitude: f64, period: f64 },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("readout head has not been fitted")]
    NotFitted,

    #[error("degenerate representation: {0}")]
    DegenerateRepresentation(&'static str),

    #[error("sample {index} has a zero-norm activation vector")]
    ZeroVector { index: usize },

    #[error("sample sets differ: {0}")]
    SampleMismatch(String),

    #[error("similarity matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    #[error("block [{start}, {end}] outside layers 1..={layers}")]
    BlockOutOfRange {
        start: usize,
        end: usize,
        layers: usize,
    },

    #[error("class means coincide; no discriminant direction exists")]
    DegenerateClasses,

    #[error("model mismatch: {expected:016x} vs {found:016x}")]
    ModelMismatch { expected: u64, found: u64 },

    #[error("class {0} has no samples")]
    EmptyClass(String),

    #[error("token {token} out of range for {tokens} tokens")]
    TokenOutOfRange { token: usize, tokens: usize },

    #[error("{path}: bad magic, not a TLT1 tensor file")]
    BadMagic { path: PathBuf },

    #[error("{path}: payload truncated ({found} of {expected} bytes)")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::ShapeMismatch(msg.into())
    }
}
