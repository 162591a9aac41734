use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step rejected: dt = {requested} exceeds admissible dt = {admissible}")]
    StepRejected { requested: f64, admissible: f64 },

    #[error("no periodic solution: |integral of q| = {residual} exceeds {tolerance}")]
    NoPeriodicSolution { residual: f64, tolerance: f64 },

    #[error("clipped negative mass {clipped} exceeds the limit {limit}")]
    ExcessiveClipping { clipped: f64, limit: f64 },

    #[error("trajectory has {len} samples, at least 3 are required")]
    TrajectoryTooShort { len: usize },

    #[error("{kind} bound violated at {violations} of {samples} samples")]
    BoundViolation {
        kind: String,
        violations: usize,
        samples: usize,
    },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("experiment spec: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidParameter { .. }
            | Error::InvalidInput(_)
            | Error::GridMismatch { .. } => "invalid-input",
            Error::StepRejected { .. }
            | Error::NoPeriodicSolution { .. }
            | Error::ExcessiveClipping { .. }
            | Error::UnsupportedRegime(_) => "numerical",
            Error::TrajectoryTooShort { .. } | Error::BoundViolation { .. } => "bounds",
            Error::Spec(_) => "spec",
            Error::Io { .. } => "io",
            Error::Context { source, .. } => source.category(),
        }
    }
}
