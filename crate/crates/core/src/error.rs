use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite data")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("factor {k} exceeds image dimensions {height}x{width}")]
    FactorTooLarge { k: usize, height: usize, width: usize },
    #[error("k out of supported range 2..7 (got {0})")]
    FactorOutOfRange(usize),
    #[error("empty channel")]
    EmptyChannel,
    #[error("image {height}x{width} is smaller than one {patch}px patch")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("train_count {train_count} out of range for {total} patients")]
    TrainCountOutOfRange { train_count: usize, total: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset pair has k={found}, expected k={expected}")]
    FactorMismatch { expected: usize, found: usize },
    #[error("missing preprocessing statistics")]
    MissingPreprocessingStats,
    #[error("sampling steps {steps} out of range 1..={max}")]
    StepsOutOfRange { steps: usize, max: usize },
}
