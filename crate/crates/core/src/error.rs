use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    #[error("path {path:?} exploded at step {step} (t = {time}): |X| = {norm}")]
    Explosion {
        path: Option<usize>,
        step: usize,
        time: f64,
        norm: f64,
    },

    #[error("diffusion matrix ill-conditioned at t = {time}: cond(sigma sigma^T) = {condition:e}")]
    IllConditionedDiffusion { time: f64, condition: f64 },

    #[error("exponential martingale overflow: M = {m}, <M> = {qv}")]
    ExpOverflow { m: f64, qv: f64 },

    #[error("observable value {value} exceeds its declared bound {bound}")]
    ObservableBound { value: f64, bound: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("inconclusive fit: only {usable} usable points (need 3)")]
    InconclusiveFit { usable: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigenvalue {index} is not simple (gap {gap:e})")]
    DegenerateEigenvalue { index: usize, gap: f64 },

    #[error("eigen solver did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("discretization error: leading eigenvalue {value} of the period operator differs from 1")]
    Discretization { value: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attach a path index to explosion errors coming out of an ensemble run.
    pub(crate) fn with_path(self, index: usize) -> Self {
        match self {
            Error::Explosion {
                step, time, norm, ..
            } => Error::Explosion {
                path: Some(index),
                step,
                time,
                norm,
            },
            other => other,
        }
    }
}
