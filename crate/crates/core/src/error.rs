use thiserror::Error;

/// Errors raised across the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("conjugate gradient failed at iteration {iteration}: residual {residual:e} ({reason})")]
    Cg {
        iteration: usize,
        residual: f64,
        reason: &'static str,
    },

    #[error("data-fidelity solve in unroll {unroll} failed: {source}")]
    Unroll {
        unroll: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("GRAPPA calibration rejected: {reason} (rank {rank} of {unknowns} unknowns)")]
    Calibration {
        reason: String,
        rank: usize,
        unknowns: usize,
    },

    #[error("perturbation generation gave up after {attempts} attempts: {constraint}")]
    PerturbationRejected { attempts: usize, constraint: String },

    #[error("non-finite loss at epoch {epoch}: {breakdown}")]
    NonFiniteLoss { epoch: usize, breakdown: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::Cg { .. }
            | Error::Calibration { .. }
            | Error::NonFiniteLoss { .. }
            | Error::PerturbationRejected { .. } => true,
            Error::Unroll { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
