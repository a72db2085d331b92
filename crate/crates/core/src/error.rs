use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("unknown op kind `{0}`")]
    UnknownOp(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("invalid parameter name `{0}`")]
    InvalidParamName(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty annotated line")]
    EmptyLine,

    #[error("malformed annotation at byte {offset}: {reason}")]
    MalformedMarker { offset: usize, reason: String },

    #[error("{path}:{line}: {reason}")]
    EmbeddingParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: expected {expected} dimensions, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: duplicate word `{word}`")]
    DuplicateWord {
        path: PathBuf,
        line: usize,
        word: String,
    },

    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("word spans do not cover the character sequence: {0}")]
    SpanCoverage(String),

    #[error("teacher-forced decoding requires a target spectrogram")]
    MissingTarget,

    #[error("signal of {len} samples is shorter than the {n_fft}-point frame")]
    SignalTooShort { len: usize, n_fft: usize },

    #[error("malformed wav: {0}")]
    MalformedWav(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("non-finite loss at step {step}: {detail}")]
    NanLoss { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
