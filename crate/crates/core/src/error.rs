use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty evaluation set")]
    EmptyEvaluationSet,

    #[error("IoU undefined: no occupied voxels in prediction or ground truth")]
    IouUndefined,

    #[error("no class present in prediction or ground truth")]
    NoClassPresent,

    #[error("PRR undefined: zero base error")]
    ZeroBaseError,

    #[error("PRR undefined: every prediction is an error")]
    AllErrors,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing field: {0}")]
    MissingField(&'static str),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("diverged at iteration {iteration}: {what} is not finite")]
    Divergence { iteration: usize, what: &'static str },

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported dump version {0}")]
    UnsupportedVersion(u32),

    #[error("size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable numeric code, distinct per failure class of the dump reader.
    pub fn code(&self) -> u8 {
        match self {
            Error::BadMagic => 10,
            Error::UnsupportedVersion(_) => 11,
            Error::SizeMismatch { .. } => 12,
            Error::Io(_) => 13,
            Error::Parse(_) => 14,
            Error::Divergence { .. } => 20,
            Error::MissingField(_) => 21,
            _ => 1,
        }
    }
}
