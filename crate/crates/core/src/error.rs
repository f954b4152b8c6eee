//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, splitting, scoring, and I/O.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// The weighted mean Jacobian was singular where an inverse is required.
    #[error("singular weighted Jacobian in {context}")]
    SingularJacobian {
        /// Where the singular matrix arose (e.g. "newton iteration").
        context: String,
    },

    /// Fewer positively weighted observations than parameters to estimate.
    #[error("insufficient data in {context}: need at least {needed} observations, have {got}")]
    InsufficientData {
        /// Minimum number of usable observations.
        needed: usize,
        /// Number actually available.
        got: usize,
        /// Which fit or check was starved.
        context: String,
    },

    /// An evaluation produced NaN or infinity where a finite value is required.
    #[error("non-finite evaluation at {context}")]
    NonFiniteEvaluation {
        /// The offending probe point or quantity.
        context: String,
    },

    /// A fit stopped without meeting the residual tolerance.
    #[error("fit did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged {
        /// Infinity norm of the mean estimating equation at the best iterate.
        residual: f64,
        /// Newton steps taken.
        iterations: usize,
    },

    /// An error arising inside one stage of a two-stage fit.
    #[error("stage {stage}: {source}")]
    Stage {
        /// 1 for the nuisance stage, 2 for the plug-in stage.
        stage: u8,
        /// Underlying failure.
        #[source]
        source: Box<Error>,
    },

    /// An error arising while fitting one split column.
    #[error("split {split}: {source}")]
    Split {
        /// Zero-based split column index.
        split: usize,
        /// Underlying failure.
        #[source]
        source: Box<Error>,
    },

    /// Every split column failed to produce a converged two-stage fit.
    #[error("all {attempted} split columns failed to fit")]
    AllSplitsFailed {
        /// Number of columns attempted.
        attempted: usize,
    },

    /// A split column cannot be fit (e.g. all ones or all zeros).
    #[error("degenerate split column: {0}")]
    DegenerateSplit(String),

    /// Variance passed to an interval was negative.
    #[error("negative variance {variance:e} passed to interval construction")]
    NegativeVariance {
        /// The offending value.
        variance: f64,
    },

    /// Confidence level outside the open unit interval.
    #[error("confidence level {level} is outside (0, 1)")]
    InvalidLevel {
        /// The offending value.
        level: f64,
    },

    /// Model input violates a domain restriction (e.g. negative activity).
    #[error("domain error: {0}")]
    Domain(String),

    /// Score scaling has no usable range.
    #[error("degenerate score range: {0}")]
    DegenerateRange(String),

    /// Input table does not match the required column schema.
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// Invalid argument combination.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Requested model name is not registered.
    #[error("unknown model '{name}'; known models: {known}")]
    UnknownModel {
        /// The requested name.
        name: String,
        /// Comma-separated registry contents.
        known: String,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV parse or write failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// JSON parse or write failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps `self` with the stage (1 or 2) it occurred in.
    pub fn in_stage(self, stage: u8) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Wraps `self` with the split column it occurred in.
    pub fn in_split(self, split: usize) -> Self {
        Error::Split {
            split,
            source: Box::new(self),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
