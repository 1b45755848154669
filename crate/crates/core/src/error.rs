use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed input: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: label `{label}` has no mapping to -1/+1")]
    UnmappedLabel { line: usize, label: String },

    #[error("line {line}: feature index {index} is not strictly increasing")]
    NonIncreasingIndex { line: usize, index: u32 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: weights have length {weights}, data needs {required}")]
    DimensionMismatch { weights: usize, required: usize },

    #[error("N / m0 = {n_total} / {m0} is not a power of two")]
    NotPowerOfTwo { n_total: usize, m0: usize },

    #[error("non-finite iterate at stage n = {stage_n}, iteration {iteration}")]
    Divergence { stage_n: usize, iteration: usize },

    #[error("iteration budget of {iterations} exhausted at stage n = {stage_n}")]
    BudgetExhausted { stage_n: usize, iterations: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
