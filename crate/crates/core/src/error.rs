use thiserror::Error;

/// Errors raised by the solvers, validators and document loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{name} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("{name} is not positive definite (minimum eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { name: String, min_eigenvalue: f64 },

    #[error("{name} is not positive semidefinite (minimum eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveSemidefinite { name: String, min_eigenvalue: f64 },

    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error("pair {pair} is not controllable: Kalman rank {rank} < {n}")]
    Uncontrollable { pair: String, rank: usize, n: usize },

    #[error("{name} has a non-finite entry")]
    NonFinite { name: String },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("trajectory blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("game Riccati equation has no solution: escape near t = {t}")]
    RiccatiBlowUp { t: f64 },

    #[error("Lyapunov operator is singular (eigenvalue pair sums to zero)")]
    SingularOperator,

    #[error("saddle inequality violated for player {player} at perturbation {index}: margin {margin:.3e}")]
    SaddleViolation {
        player: u8,
        index: usize,
        margin: f64,
    },

    #[error("no convergence after {iterations} iterations (best residual {best_residual:.3e})")]
    NoConvergence {
        best_residual: f64,
        iterations: usize,
    },

    #[error("stationary covariance is not assignable: rank {lhs_rank} vs {rhs_rank}")]
    Infeasible { lhs_rank: usize, rhs_rank: usize },

    #[error("stationarity system is singular (least-squares residual {residual:.3e})")]
    SingularKkt { residual: f64 },

    #[error("simulated path {path} became non-finite at t = {t}")]
    NonFinitePath { path: usize, t: f64 },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
