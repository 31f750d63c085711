use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },
    #[error("track of {len} samples is shorter than one window of {window}")]
    TrackTooShort { len: usize, window: usize },
    #[error("segment [{start}, {end}) out of bounds for track of {len} samples")]
    SegmentOutOfBounds { start: usize, end: usize, len: usize },

    #[error("operation requires a white-box model")]
    CapabilityRequired,
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("heatmap is identically zero; no candidate zone exists")]
    EmptyHeatmap,
    #[error("mask is empty")]
    EmptyMask,
    #[error("query budget {budget} cannot cover the {required} queries of the coarse pass")]
    InsufficientBudget { budget: usize, required: usize },
    #[error("gap at [{start}, {end}) has no surrounding context")]
    NoContext { start: usize, end: usize },

    #[error("embedding sets are incompatible: {0}")]
    IncompatibleEmbeddings(String),
    #[error("covariance is rank deficient: {0}")]
    RankDeficient(String),
    #[error("no originally-correct clips to score")]
    NoCorrectClips,

    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}
