use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("patch larger than image: k={k} but image is {n1}x{n2}")]
    PatchTooLarge { k: usize, n1: usize, n2: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("training size exceeds pixel count: M={m} > N={n}")]
    TrainingTooLarge { m: usize, n: usize },

    #[error("kernel matrix exceeds memory budget: M={m} > cap {cap}")]
    MemoryBudget { m: usize, cap: usize },

    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },

    #[error("histogram is not normalized (sum = {0})")]
    NotNormalized(f64),

    #[error("npy format: {0}")]
    Npy(String),

    #[error("binary format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
