use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Delay (or flux) outside the range covered by the calibrated surface.
    #[error("delay {delay_ns} ns outside modeled range [{min_ns}, {max_ns}] ns")]
    OutOfDomain {
        delay_ns: f64,
        min_ns: f64,
        max_ns: f64,
    },

    /// Input data violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Anchor data is internally inconsistent (monotonicity violated).
    #[error("inconsistent anchors: {0}")]
    InconsistentAnchors(String),

    /// A least-squares fit did not reach the requested tolerance.
    #[error("fit failed to converge: max residual {max_residual} > tolerance {tolerance}")]
    FitFailed { max_residual: f64, tolerance: f64 },

    /// QBER or photocurrent is undefined because every relevant count is zero.
    #[error("undefined result: {0}")]
    Undefined(String),

    /// The attack cannot reach the requested click rate at these parameters.
    #[error("infeasible rate: required duty factor {required_duty:.4} exceeds 1 (shortfall {shortfall:.3e} counts/s)")]
    InfeasibleRate { required_duty: f64, shortfall: f64 },

    /// No grid point satisfies the optimizer constraints.
    #[error("no feasible attack parameters in the searched grid")]
    NoSolution,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
