//! Crate-wide error type. Validation failures carry enough context to name
//! the offending design, grid point, or file location.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A design record failed validation (dimensions, symmetry, definiteness,
    /// bounds). The reason names the first violated requirement.
    #[error("design `{id}`: {reason}")]
    InvalidDesign { id: String, reason: String },

    /// A finite-grid model failed validation.
    #[error("finite-theta model: {0}")]
    InvalidModel(String),

    /// A prior failed validation (ordering, negativity, normalization).
    #[error("prior: {0}")]
    InvalidPrior(String),

    /// A functional could not be constructed for the given design.
    #[error("functional: {0}")]
    InvalidFunctional(String),

    /// The moment covariance `Sigma(theta, theta)` admitted no Cholesky
    /// factorization at the named point.
    #[error("covariance kernel is not positive definite at theta = {theta}")]
    SingularKernel { theta: f64 },

    /// An objective had no usable evaluation points, or a posterior had zero
    /// total mass.
    #[error("degenerate objective: {0}")]
    DegenerateObjective(String),

    /// Bad simulation or generator configuration.
    #[error("config: {0}")]
    InvalidConfig(String),

    /// A calibration file could not be read or parsed.
    #[error("calibration file `{path}`: {reason}")]
    Calibration { path: String, reason: String },

    /// A results CSV had an unexpected header, field count, or field value.
    #[error("results file `{path}`, line {line}: {reason}")]
    MalformedCsv {
        path: String,
        line: usize,
        reason: String,
    },

    /// An estimator failed inside the Monte Carlo loop; names the spec and
    /// replication so the draw can be reproduced from the master seed.
    #[error("estimator `{estimator}` failed on spec `{spec_id}`, replication {replication}: {source}")]
    EstimatorFailure {
        estimator: String,
        spec_id: String,
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
