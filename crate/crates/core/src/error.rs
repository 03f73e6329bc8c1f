use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index {index} out of range for {bound} entries")]
    Index { index: usize, bound: usize },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("insufficient capacity: {0}")]
    Capacity(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
