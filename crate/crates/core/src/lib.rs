//! Ensemble Kalman filtering and ensemble Kalman inversion with linear
//! equality and inequality constraints enforced member by member through
//! convex quadratic programs.

pub mod constrained_eki;
pub mod constrained_enkf;
pub mod constraints;
pub mod eki;
pub mod enkf;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod models;
pub mod noise;
pub mod qp;

pub use constraints::{LinearConstraints, ViolationReport, ViolationTolerance};
pub use ensemble::{compute_stats, Divisor, Ensemble, EnsembleStats};
pub use error::{Error, Result, RunPhase};
pub use noise::{GaussianNoise, NoiseStreams, Purpose};
pub use qp::{QpOptions, QpSolution, QpStatus, QuadraticProgram};
