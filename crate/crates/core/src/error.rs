use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular spline system: {0}")]
    SingularSystem(String),

    #[error("mask contains no foreground")]
    EmptyMask,

    #[error("input must be square, got {width}x{height}")]
    NonSquareInput { width: usize, height: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("grid {width}x{height} is too small (need at least 2x2)")]
    GridTooSmall { width: usize, height: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{given} coefficients given but the model has {available} components")]
    TooManyCoefficients { given: usize, available: usize },

    #[error("bad bin edges: {0}")]
    BadEdges(String),

    #[error("model/config mismatch: {0}")]
    ModelConfigMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
