use std::path::PathBuf;

/// Errors raised by the search engine and its harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("gradient requires a scalar output, got shape {0:?}")]
    NotScalar((usize, usize)),

    #[error("variable {0} does not belong to this tape")]
    ForeignVar(usize),

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("row {row} is not a discrete architecture row (expected exactly one nonzero in (0,1]): {detail}")]
    NotDiscrete { row: usize, detail: String },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid regularizer: {0}")]
    Regularizer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numerical abort at epoch {epoch}: {detail}")]
    NumericalAbort { epoch: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
