//! Incentive synthesis for covariance steering in two-player zero-sum
//! linear-quadratic stochastic differential games.
//!
//! Given a plant `dx = (Ax + B1 u + B2 v) dt + C dw` and a Gaussian target,
//! the crate computes the incentive that makes rational (Nash) play steer
//! the state covariance to the target:
//!
//! * [`steering`] finds a terminal cost `F` so that `Σ(T) = ΣT` on a finite
//!   horizon (shooting on the coupled Riccati/Lyapunov system),
//! * [`minimax`] recovers the same `F` independently as the terminal
//!   multiplier of the discretized convex-concave formulation,
//! * [`stationary`] designs a running cost `Q` for a stationary target,
//! * [`sim`] validates any synthesized law by Monte Carlo.

pub mod cli;
pub mod document;
pub mod error;
pub mod game;
pub mod minimax;
pub mod model;
pub mod numkit;
pub mod sim;
pub mod stationary;
pub mod steering;

pub use error::{Error, Result};
pub use model::{FiniteHorizonProblem, Plant, SolverOptions, StationaryProblem};
pub use numkit::{MatrixTrajectory, TimeGrid};
