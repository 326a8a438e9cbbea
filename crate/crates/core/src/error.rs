use thiserror::Error;

/// Minimum squared state norm accepted by any measurement.
pub const NORM_GUARD: f64 = 0.99;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The Fock cutoff is too small for the state being represented.
    #[error("truncation: squared norm {norm_sqr:.9} < {NORM_GUARD} at cutoff {cutoff}{}", fmt_point(*.x))]
    Truncation {
        norm_sqr: f64,
        cutoff: usize,
        x: Option<f64>,
    },

    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_point(x: Option<f64>) -> String {
    match x {
        Some(x) => format!(" (collocation point x = {x})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attaches the offending collocation point to a truncation error.
    pub fn at_point(self, point: f64) -> Self {
        match self {
            Error::Truncation {
                norm_sqr, cutoff, ..
            } => Error::Truncation {
                norm_sqr,
                cutoff,
                x: Some(point),
            },
            other => other,
        }
    }

    /// True for failures caused by the numerics (truncation, divergence)
    /// rather than by the caller's configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Truncation { .. } | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
