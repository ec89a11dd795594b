use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A modelling assumption the bounds rely on does not hold, e.g. the
    /// Hoeffding error bound is not smaller than the mean weight.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("rejected batch: {0}")]
    RejectedBatch(String),

    /// Every weight of a batch underflowed to exactly zero.
    #[error("weight underflow: all {0} weights are zero in floating point")]
    WeightUnderflow(usize),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("internal invariant failed: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
