use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema error in {file} at row {row}: {message}")]
    Schema {
        file: String,
        row: usize,
        message: String,
    },
    #[error("duplicate trial id `{0}`")]
    DuplicateTrialId(String),
    #[error("marker map is missing required role `{0}`")]
    MissingRole(String),
    #[error("invalid marker map: {0}")]
    InvalidMarkerMap(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid cutoff {cutoff} Hz for sample rate {sample_rate} Hz")]
    InvalidCutoff { cutoff: f64, sample_rate: f64 },
    #[error("wrist speed never exceeds the motion threshold")]
    NoMotion,
    #[error("degenerate hand frame at frame {0}: frame markers are collinear")]
    DegenerateFrame(usize),
    #[error("invalid snippet fraction {0}")]
    InvalidFraction(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} exceeds the available {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("invalid kernel bandwidth {0}")]
    InvalidSigma(f64),
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailure,

    #[error("invalid ker-COV bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error("matrix is not positive definite (min eigenvalue {0})")]
    NotPositiveDefinite(f64),

    #[error("training labels contain a single class")]
    SingleClass,
    #[error("solver did not converge within {0} iterations")]
    NoConvergence(u64),
    #[error("operation requires a linear model")]
    NotLinear,

    #[error("row mismatch: block `{block}` has {got} rows, expected {expected}")]
    RowMismatch {
        block: String,
        expected: usize,
        got: usize,
    },
    #[error("empty kernel list")]
    EmptyList,
    #[error("gram matrices use different trial orderings")]
    OrderingMismatch,

    #[error("cell (subject {subject}, {intention}) has {count} trials, need at least {needed}")]
    InsufficientCell {
        subject: u32,
        intention: String,
        count: usize,
        needed: usize,
    },
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
