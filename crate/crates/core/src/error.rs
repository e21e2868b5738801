use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("input {0} does not influence the output")]
    DisconnectedInput(usize),
    #[error("unsupported wavelet family: {0}")]
    UnsupportedFamily(String),
    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    SingularMatrix(f64),
    #[error("series length {0} is not a power of two")]
    BadLength(usize),
    #[error("smoothing width {width} exceeds series length {len}")]
    WidthTooLarge { width: usize, len: usize },
    #[error("causal matrix is not nilpotent (residual {0:e})")]
    NotNilpotent(f64),
    #[error("non-finite loss in {step} at iteration {iteration}")]
    NonFiniteLoss {
        step: &'static str,
        iteration: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground truth has no edges")]
    DegenerateTruth,
    #[error("invalid kernel expression: {0}")]
    KernelParse(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
