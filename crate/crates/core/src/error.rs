use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("market share undefined: the demand pool is empty")]
    EmptyPool,

    #[error("cannot impute demand for count {count}: largest supported demand is {max}")]
    Imputation { count: u32, max: u32 },

    #[error("corrupted sampler state: {0}")]
    CorruptedState(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("estimates are not label-aligned")]
    Unaligned,

    #[error("state variant {variant} requires {missing}")]
    MissingFeature {
        variant: &'static str,
        missing: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("clustering failed: {0}")]
    Cluster(String),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("distributions have mismatched supports ({left} vs {right} points)")]
    SupportMismatch { left: usize, right: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::MissingFeature { .. } | Error::Dimension { .. } => {
                ErrorKind::Config
            }
            Error::InvalidRecord(_)
            | Error::EmptyPool
            | Error::Imputation { .. }
            | Error::EmptyTestSet
            | Error::SupportMismatch { .. }
            | Error::Data(_)
            | Error::Csv(_)
            | Error::Checkpoint(_) => ErrorKind::Data,
            Error::CorruptedState(_)
            | Error::Estimation(_)
            | Error::Unaligned
            | Error::Cluster(_)
            | Error::Io(_) => ErrorKind::Runtime,
        }
    }
}
