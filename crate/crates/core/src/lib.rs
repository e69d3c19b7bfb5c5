//! Sparse principal component analysis via an augmented Lagrangian method
//! with nonmonotone proximal-gradient inner solvers.
//!
//! The solver looks for `p x r` loadings `V` minimizing
//! `-Tr(V^T S V) + rho . |V|` subject to `|V_i^T S V_j| <= delta_ij` for
//! `i != j` and `V^T V = I`, where `S` is a sample covariance matrix.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auglag;
pub mod covariance;
pub mod datasets;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod subproblem;

pub use auglag::{solve_sparse_pca, RobinsonClass};
pub use covariance::CovarianceOperator;
pub use error::{Result, SpcaError};
pub use metrics::MetricsBundle;
pub use model::{
    LoadingMatrix, MultiplierSet, PenaltyState, ProblemSpec, SolveResult, SolveStatus,
};
pub use subproblem::{InnerConfig, InnerMethod};

/// Magnitude at or below which a loading counts as zero.
pub const ZERO_TOL: f64 = 1e-6;
