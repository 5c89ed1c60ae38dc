//! Crate-wide error type.
//!
//! Library functions return `Result<T>` with this enum; the CLI maps
//! configuration-class errors to exit code 2 and numerical-class errors to
//! exit code 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single problem found while validating a model specification.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecViolation {
    /// A treatment or mediator probability breaches the positivity floor.
    Positivity { vertex: String, row: usize, prob: f64 },
    /// A categorical row does not sum to one, or a probability is outside [0, 1].
    MalformedCpt { vertex: String, row: usize, detail: String },
    /// A table has the wrong length for its declared parent set.
    BadShape { vertex: String, detail: String },
}

impl std::fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpecViolation::Positivity { vertex, row, prob } => {
                write!(f, "{vertex} row {row}: probability {prob} breaches the positivity floor")
            }
            SpecViolation::MalformedCpt { vertex, row, detail } => {
                write!(f, "{vertex} row {row}: {detail}")
            }
            SpecViolation::BadShape { vertex, detail } => write!(f, "{vertex}: {detail}"),
        }
    }
}

#[derive(Error, Debug)]
pub enum Error {
    /// Spec validation failed; every violation found is listed.
    #[error("invalid spec:{}", .0.iter().map(|v| format!("\n  - {v}")).collect::<String>())]
    InvalidSpec(Vec<SpecViolation>),

    /// An intervention references edges or stages that do not exist, or
    /// assigns only part of a treatment's outgoing edges.
    #[error("intervention mismatch: {0}")]
    InterventionMismatch(String),

    /// An exact enumeration would exceed the configured term budget.
    #[error("cardinality overflow: enumeration needs {required} items, budget is {budget}")]
    CardinalityOverflow { required: u128, budget: u128 },

    /// Logistic fit diverged; the data are (quasi-)separated.
    #[error("separation detected: coefficient norm {norm:.2} exceeds {limit}")]
    Separation { norm: f64, limit: f64 },

    /// A linear system was rank-deficient.
    #[error("singular system: {0}")]
    Singular(String),

    /// An iterative fit hit its iteration cap before converging.
    #[error("no convergence after {iters} iterations (gradient norm {grad:.3e})")]
    MaxIterations { iters: usize, grad: f64 },

    /// Design/coefficient dimensions disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An estimation weight denominator fell below the positivity floor, or
    /// an observed stratum carries a single treatment value.
    #[error("positivity failure: {0}")]
    PositivityFailure(String),

    /// Newton failed to drive an estimating equation to zero.
    #[error("no root: residual {residual:.3e} after {iters} iterations")]
    NoRoot { residual: f64, iters: usize },

    /// A value search was asked to optimize over zero candidate policies.
    #[error("empty policy class")]
    EmptyClass,

    /// Too many bootstrap replicates failed to produce an estimate.
    #[error("bootstrap failure: {failed} of {total} replicates failed")]
    ReplicateFailure { failed: usize, total: usize },

    /// A dataset violates the column contract (missing values, non-binary
    /// codes, layout mismatch).
    #[error("bad data: {0}")]
    BadData(String),

    /// Invalid run configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// The requested combination is outside the supported scope.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors arising from invalid inputs or configuration rather
    /// than from numerical trouble during estimation.
    pub fn is_config_class(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InterventionMismatch(_)
                | Error::EmptyClass
                | Error::BadData(_)
                | Error::Config(_)
                | Error::Unsupported(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
