use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("grid extent {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("retained modes {modes:?} do not fit grid {grid:?}")]
    ModesExceedGrid { modes: Vec<usize>, grid: Vec<usize> },

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("relative mse undefined: target sample {0} has zero norm")]
    ZeroNormTarget(usize),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite state in {solver} at step {step}")]
    Blowup { solver: &'static str, step: usize },

    #[error("conjugate gradients did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Short machine-readable category, used by the command line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Invalid(_) => "invalid",
            Error::NotPowerOfTwo(_) => "grid",
            Error::ModesExceedGrid { .. } => "grid",
            Error::NonScalarLoss(_) => "autodiff",
            Error::ZeroNormTarget(_) => "loss",
            Error::NonFiniteGradient(_) => "optimizer",
            Error::Blowup { .. } => "solver",
            Error::NoConvergence { .. } => "solver",
            Error::UnknownParameter(_) => "parameter",
            Error::Dataset(_) => "dataset",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
