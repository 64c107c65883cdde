use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rollout diverged at step {step}: {reason}")]
    RolloutDiverged { step: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("action {action} is outside the support of the policy")]
    OutOfSupport { action: f64 },

    #[error("mismatched policy families: {0}")]
    FamilyMismatch(String),

    #[error("quadrature did not converge: estimate {estimate}, error {error} > tolerance {tolerance}")]
    Quadrature {
        estimate: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("soft-q improvement undefined: leading action coefficient {0} is not negative")]
    ImprovementUndefined(f64),

    #[error("LQ problem not admissible: {0}")]
    Admissibility(String),

    #[error("LQ solution degenerate: N - k2 D^2 = {0} <= 0")]
    Degenerate(f64),

    #[error("iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
