use std::path::PathBuf;

use crate::maxent::FitReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: String, msg: String },

    #[error("closure violation: generator image of {alpha} has degree {degree} > order {order}")]
    ClosureViolation {
        alpha: String,
        degree: u32,
        order: u32,
    },

    #[error("model has no guard")]
    NoGuard,

    #[error("guard facet does not intersect the domain")]
    EmptyFacet,

    #[error("integrand is not finite at node {node:?}")]
    IntegrationFailure { node: Vec<f64> },

    #[error(
        "moments not realizable on the domain (gradient norm {:.3e} after {} iterations, condition {:.3e})",
        .0.grad_norm, .0.iterations, .0.condition
    )]
    NonRealizable(Box<FitReport>),

    #[error("degenerate measurement update: log posterior mass {log_mass:.3} underflows")]
    DegenerateUpdate { log_mass: f64 },

    #[error("normalized rollout error undefined for {alpha}: reference magnitude vanishes")]
    ZeroReference { alpha: String },

    #[error("at t = {t:.6}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &str, msg: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_time(self, t: f64) -> Self {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through time tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config { .. }
            | Error::InvalidParameter { .. }
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::DimensionMismatch { .. }
            | Error::Shape(_)
            | Error::NoGuard
            | Error::EmptyFacet
            | Error::ClosureViolation { .. } => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
