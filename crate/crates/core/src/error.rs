use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dim overflow: {0:?}")]
    DimOverflow(Vec<u64>),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: String },

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rejection sampling budget exhausted after {attempts} attempts: {reason}")]
    BudgetExhausted { attempts: usize, reason: String },

    #[error("CFL violation: c_max*dt/dx = {courant:.4} exceeds {limit:.4}")]
    CflViolation { courant: f64, limit: f64 },

    #[error("non-finite field at step {step} (cell {cell})")]
    Unstable { step: usize, cell: usize },

    #[error("analysis window of {samples} samples is shorter than one period at {freq_hz} Hz")]
    WindowTooShort { samples: usize, freq_hz: f64 },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("undefined SNR: clean image is identically zero over the sound region")]
    UndefinedSnr,

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("non-finite loss at step {step} (lr = {lr:e})")]
    NonFiniteLoss { step: usize, lr: f64 },

    #[error("band [{low_hz}, {high_hz}] Hz lies outside (0, {nyquist_hz}) Hz")]
    BandOutsideNyquist {
        low_hz: f64,
        high_hz: f64,
        nyquist_hz: f64,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic => "bad_magic",
            Error::TruncatedPayload { .. } => "truncated_payload",
            Error::DimOverflow(_) => "dim_overflow",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::Metadata(_) => "metadata",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::BudgetExhausted { .. } => "budget_exhausted",
            Error::CflViolation { .. } => "cfl_violation",
            Error::Unstable { .. } => "unstable",
            Error::WindowTooShort { .. } => "window_too_short",
            Error::DegenerateSamples(_) => "degenerate_samples",
            Error::UndefinedSnr => "undefined_snr",
            Error::BackwardBeforeForward => "backward_before_forward",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::BandOutsideNyquist { .. } => "band_outside_nyquist",
            Error::EmptyDataset => "empty_dataset",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
