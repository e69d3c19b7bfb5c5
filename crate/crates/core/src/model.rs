//! Shared domain types and the small matrix primitives used across the solver.

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::auglag::{ConstraintResiduals, OuterRecord, RobinsonClass};
use crate::error::{shape_err, Result, SpcaError};
use crate::metrics::MetricsBundle;

/// Entrywise `max(0, m_ij)`.
pub fn nonneg_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| x.max(0.0))
}

/// Diagonal matrix carrying the diagonal of a square matrix.
pub fn tilde_diag(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SpcaError::Shape(format!(
            "diagonal part needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DMatrix::from_diagonal(&m.diagonal()))
}

/// Expands scalar sparsity and correlation weights into the matrix forms the
/// solver works with: a constant `p x r` weight matrix and an `r x r` cap
/// matrix with zero diagonal.
pub fn broadcast_spec(
    rho: f64,
    delta: f64,
    p: usize,
    r: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(SpcaError::Domain(format!(
            "rho must be finite and >= 0, got {rho}"
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(SpcaError::Domain(format!(
            "delta must be finite and >= 0, got {delta}"
        )));
    }
    let rho_m = DMatrix::from_element(p, r, rho);
    let delta_m = DMatrix::from_fn(r, r, |i, j| if i == j { 0.0 } else { delta });
    Ok((rho_m, delta_m))
}

/// Parameters of the penalty/multiplier controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyParams {
    pub initial_varrho: f64,
    /// Growth factor applied to the penalty when violation stalls.
    pub sigma_growth: f64,
    pub tau: f64,
    /// Required violation reduction factor per outer iteration.
    pub gamma: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            initial_varrho: 1.0,
            sigma_growth: 10.0,
            tau: 0.2,
            gamma: 0.25,
        }
    }
}

/// A validated sparse PCA problem: number of components, sparsity weights,
/// correlation caps and termination tolerances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSpec {
    p: usize,
    r: usize,
    #[serde(skip)]
    rho: DMatrix<f64>,
    #[serde(skip)]
    delta: DMatrix<f64>,
    pub eps_i: f64,
    pub eps_e: f64,
    pub eps_o: f64,
    pub outer_max_iter: usize,
    pub inner_max_iter: usize,
    pub penalty: PenaltyParams,
}

pub const DEFAULT_EPS_I: f64 = 1e-3;
pub const DEFAULT_EPS_E: f64 = 1e-3;
pub const DEFAULT_EPS_O: f64 = 0.1;
pub const DEFAULT_OUTER_MAX_ITER: usize = 200;
pub const DEFAULT_INNER_MAX_ITER: usize = 50_000;

impl ProblemSpec {
    pub fn new(rho: DMatrix<f64>, delta: DMatrix<f64>) -> Result<Self> {
        let (p, r) = rho.shape();
        if r == 0 || p == 0 {
            return Err(SpcaError::Domain("need 1 <= r <= p".into()));
        }
        if r > p {
            return Err(SpcaError::Domain(format!("r = {r} exceeds p = {p}")));
        }
        if delta.shape() != (r, r) {
            return Err(shape_err("delta", (r, r), delta.shape()));
        }
        if rho.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(SpcaError::Domain(
                "rho entries must be finite and >= 0".into(),
            ));
        }
        for i in 0..r {
            if delta[(i, i)] != 0.0 {
                return Err(SpcaError::Domain("delta must have a zero diagonal".into()));
            }
            for j in 0..r {
                let d = delta[(i, j)];
                if !(d >= 0.0) {
                    return Err(SpcaError::Domain("delta entries must be >= 0".into()));
                }
                if d != delta[(j, i)] {
                    return Err(SpcaError::Domain("delta must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            p,
            r,
            rho,
            delta,
            eps_i: DEFAULT_EPS_I,
            eps_e: DEFAULT_EPS_E,
            eps_o: DEFAULT_EPS_O,
            outer_max_iter: DEFAULT_OUTER_MAX_ITER,
            inner_max_iter: DEFAULT_INNER_MAX_ITER,
            penalty: PenaltyParams::default(),
        })
    }

    pub fn from_scalars(p: usize, r: usize, rho: f64, delta: f64) -> Result<Self> {
        let (rho_m, delta_m) = broadcast_spec(rho, delta, p, r)?;
        Self::new(rho_m, delta_m)
    }

    pub fn with_tolerances(mut self, eps_i: f64, eps_e: f64, eps_o: f64) -> Result<Self> {
        for (name, v) in [("eps_i", eps_i), ("eps_e", eps_e), ("eps_o", eps_o)] {
            if !(v > 0.0) {
                return Err(SpcaError::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        self.eps_i = eps_i;
        self.eps_e = eps_e;
        self.eps_o = eps_o;
        Ok(self)
    }

    pub fn with_max_iters(mut self, outer: usize, inner: usize) -> Result<Self> {
        if outer == 0 || inner == 0 {
            return Err(SpcaError::Domain("iteration caps must be positive".into()));
        }
        self.outer_max_iter = outer;
        self.inner_max_iter = inner;
        Ok(self)
    }

    pub fn with_penalty_params(mut self, params: PenaltyParams) -> Result<Self> {
        if !(params.initial_varrho > 0.0)
            || !(params.sigma_growth > 1.0)
            || !(params.tau > 0.0)
            || !(params.gamma > 0.0 && params.gamma < 1.0)
        {
            return Err(SpcaError::Domain(format!(
                "invalid penalty parameters {params:?}"
            )));
        }
        self.penalty = params;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }
}

/// A `p x r` matrix of loading vectors, one component per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix(DMatrix<f64>);

impl LoadingMatrix {
    pub fn new(v: DMatrix<f64>) -> Self {
        Self(v)
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest `|V^T V - I|` entry.
    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.0.ncols();
        let gram = self.0.transpose() * &self.0 - DMatrix::<f64>::identity(r, r);
        gram.amax()
    }
}

impl Deref for LoadingMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<DMatrix<f64>> for LoadingMatrix {
    fn from(v: DMatrix<f64>) -> Self {
        Self(v)
    }
}

/// Multipliers for the two-sided correlation caps and the orthonormality
/// constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub lambda_plus: DMatrix<f64>,
    pub lambda_minus: DMatrix<f64>,
    pub mu: DMatrix<f64>,
}

impl MultiplierSet {
    pub fn zeros(r: usize) -> Self {
        Self {
            lambda_plus: DMatrix::zeros(r, r),
            lambda_minus: DMatrix::zeros(r, r),
            mu: DMatrix::zeros(r, r),
        }
    }

    /// Starting multipliers used by the outer loop: inequality multipliers at
    /// zero, every orthonormality multiplier at one.
    pub fn initial(r: usize) -> Self {
        Self {
            lambda_plus: DMatrix::zeros(r, r),
            lambda_minus: DMatrix::zeros(r, r),
            mu: DMatrix::from_element(r, r, 1.0),
        }
    }

    /// Frobenius norm of `lambda_plus` stacked over `lambda_minus`.
    pub fn lambda_norm(&self) -> f64 {
        (self.lambda_plus.norm_squared() + self.lambda_minus.norm_squared()).sqrt()
    }

    pub fn mu_norm(&self) -> f64 {
        self.mu.norm()
    }

    /// Nonnegative, zero-diagonal and symmetric inequality multipliers, and a
    /// symmetric `mu`.
    pub fn is_well_formed(&self) -> bool {
        let r = self.mu.nrows();
        for i in 0..r {
            if self.lambda_plus[(i, i)] != 0.0 || self.lambda_minus[(i, i)] != 0.0 {
                return false;
            }
            for j in 0..r {
                if self.lambda_plus[(i, j)] < 0.0 || self.lambda_minus[(i, j)] < 0.0 {
                    return false;
                }
                if self.lambda_plus[(i, j)] != self.lambda_plus[(j, i)]
                    || self.lambda_minus[(i, j)] != self.lambda_minus[(j, i)]
                    || self.mu[(i, j)] != self.mu[(j, i)]
                {
                    return false;
                }
            }
        }
        true
    }
}

/// Penalty parameter together with the controller bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyState {
    pub varrho: f64,
    pub sigma_growth: f64,
    pub tau: f64,
    pub gamma: f64,
    /// Upper bound on accepted augmented Lagrangian values.
    pub upsilon: f64,
    pub prev_violation: Option<f64>,
}

impl PenaltyState {
    pub fn new(params: &PenaltyParams, upsilon: f64) -> Self {
        Self {
            varrho: params.initial_varrho,
            sigma_growth: params.sigma_growth,
            tau: params.tau,
            gamma: params.gamma,
            upsilon,
            prev_violation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    MaxOuterIters,
    InnerStall,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxOuterIters => "max_outer_iters",
            SolveStatus::InnerStall => "inner_stall",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub v: LoadingMatrix,
    pub multipliers: MultiplierSet,
    pub penalty: PenaltyState,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub status: SolveStatus,
    pub metrics: MetricsBundle,
    /// Residuals at the returned (snapped) loadings.
    pub residuals: ConstraintResiduals,
    /// Augmented Lagrangian value at the last inner solution.
    pub lagrangian: f64,
    /// `-Tr(V^T S V) + rho . |V|` at the last inner solution.
    pub objective: f64,
    /// Relative inner stationarity measure at the last inner solution.
    pub inner_residual: f64,
    pub robinson: RobinsonClass,
    pub history: Vec<OuterRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn nonneg_part_examples() {
        let m = dmatrix![-1.0, 2.0; 0.0, -3.0];
        assert_eq!(nonneg_part(&m), dmatrix![0.0, 2.0; 0.0, 0.0]);
        let z = DMatrix::<f64>::zeros(3, 2);
        assert_eq!(nonneg_part(&z), z);
        let pos = dmatrix![1.0, 0.5; 2.0, 3.0];
        assert_eq!(nonneg_part(&pos), pos);
    }

    #[test]
    fn tilde_diag_examples() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(tilde_diag(&m).unwrap(), dmatrix![1.0, 0.0; 0.0, 4.0]);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(tilde_diag(&id).unwrap(), id);
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(tilde_diag(&z).unwrap(), z);
        assert!(matches!(
            tilde_diag(&DMatrix::<f64>::zeros(2, 3)),
            Err(SpcaError::Shape(_))
        ));
    }

    #[test]
    fn broadcast_pitprops_parameters() {
        let (rho, delta) = broadcast_spec(0.8, 0.07, 13, 6).unwrap();
        assert_eq!(rho.shape(), (13, 6));
        assert!(rho.iter().all(|&x| x == 0.8));
        assert_eq!(delta.shape(), (6, 6));
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 0.0 } else { 0.07 };
                assert_eq!(delta[(i, j)], want);
            }
        }
    }

    #[test]
    fn broadcast_zero_and_synthetic() {
        let (rho, delta) = broadcast_spec(0.0, 0.0, 7, 3).unwrap();
        assert!(rho.iter().all(|&x| x == 0.0));
        assert!(delta.iter().all(|&x| x == 0.0));

        let (rho, delta) = broadcast_spec(4.0, 0.0, 10, 2).unwrap();
        assert_eq!(rho.shape(), (10, 2));
        assert!(rho.iter().all(|&x| x == 4.0));
        assert_eq!(delta, DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn broadcast_rejects_negative() {
        assert!(matches!(
            broadcast_spec(-0.1, 0.0, 3, 2),
            Err(SpcaError::Domain(_))
        ));
        assert!(matches!(
            broadcast_spec(0.1, -1.0, 3, 2),
            Err(SpcaError::Domain(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::from_scalars(3, 4, 0.1, 0.1).is_err());
        let bad_delta = dmatrix![0.0, 0.1; 0.2, 0.0];
        assert!(ProblemSpec::new(DMatrix::zeros(3, 2), bad_delta).is_err());
        let diag_delta = dmatrix![0.5, 0.1; 0.1, 0.0];
        assert!(ProblemSpec::new(DMatrix::zeros(3, 2), diag_delta).is_err());
        let spec = ProblemSpec::from_scalars(13, 6, 0.8, 0.07).unwrap();
        assert_eq!((spec.eps_i, spec.eps_e, spec.eps_o), (1e-3, 1e-3, 0.1));
        assert!(spec.clone().with_tolerances(0.0, 1.0, 1.0).is_err());
        assert!(spec.with_max_iters(0, 10).is_err());
    }

    proptest! {
        #[test]
        fn nonneg_part_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let m = DMatrix::from_vec(3, 4, v);
            let once = nonneg_part(&m);
            prop_assert_eq!(nonneg_part(&once), once);
        }

        #[test]
        fn tilde_diag_split_is_exact(v in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let m = DMatrix::from_vec(4, 4, v);
            let d = tilde_diag(&m).unwrap();
            let off = &m - &d;
            prop_assert_eq!(&d + off, m);
        }

        #[test]
        fn broadcast_output_is_valid_spec(rho in 0.0f64..10.0, delta in 0.0f64..2.0, p in 1usize..20, r in 1usize..6) {
            prop_assume!(r <= p);
            let (rm, dm) = broadcast_spec(rho, delta, p, r).unwrap();
            prop_assert!(ProblemSpec::new(rm, dm).is_ok());
        }
    }
}
