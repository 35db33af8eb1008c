use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions or vector lengths disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value lies outside its admissible domain (non-finite, negative depth, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The observation mask is empty, leaving the constant nullspace unconstrained.
    #[error("singular system: no valid observation constrains the depth offset")]
    SingularSystem,

    #[error("conjugate gradient hit the iteration cap ({iterations}) with relative residual {residual:.3e}")]
    Convergence { iterations: usize, residual: f64 },

    #[error("conjugate gradient diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    /// An operation was called on a value that lacks the required state.
    #[error("invalid state: {0}")]
    State(String),

    #[error("empty mask: metrics need at least one valid pixel")]
    EmptyMask,

    #[error("problem size {unknowns} exceeds the dense solver cap of {cap} unknowns")]
    Size { unknowns: usize, cap: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
