//! Augmented Lagrangian outer loop for sparse PCA with correlation caps and
//! an orthonormality constraint.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::covariance::{
    apply_quadratic, normalize_column_signs, top_eigenvectors, CovarianceOperator,
};
use crate::error::{shape_err, Result, SpcaError};
use crate::metrics::MetricsBundle;
use crate::model::{
    nonneg_part, LoadingMatrix, MultiplierSet, PenaltyState, ProblemSpec, SolveResult, SolveStatus,
};
use crate::subproblem::{solve_inner, CompositeObjective, InnerConfig, InnerTrace};
use crate::ZERO_TOL;

/// Off-diagonal part `S` of `V^T S V`, orthonormality defect `R = V^T V - I`,
/// and the two violation measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResiduals {
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub ineq_violation: f64,
    pub eq_violation: f64,
}

impl ConstraintResiduals {
    /// Builds the residuals from `G = V^T S V`.
    pub fn from_gram(g: &DMatrix<f64>, v: &DMatrix<f64>, delta: &DMatrix<f64>) -> Self {
        let r = g.nrows();
        let mut s = symmetrize(g);
        s.fill_diagonal(0.0);
        let mut rr = symmetrize(&v.tr_mul(v));
        for i in 0..r {
            rr[(i, i)] -= 1.0;
        }
        let mut ineq: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    ineq = ineq.max(s[(i, j)].abs() - delta[(i, j)]);
                }
            }
        }
        let eq = rr.amax();
        Self {
            s,
            r: rr,
            ineq_violation: ineq.max(0.0),
            eq_violation: eq,
        }
    }

    /// Larger of the two violations, used by the penalty controller.
    pub fn violation(&self) -> f64 {
        self.ineq_violation.max(self.eq_violation)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn weighted_l1(rho: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    rho.iter().zip(v.iter()).map(|(w, x)| w * x.abs()).sum()
}

/// Smooth part `w(V)` of the augmented Lagrangian, its gradient, and the
/// constraint residuals at `V`.
pub fn eval_w_and_grad(
    c: &CovarianceOperator,
    v: &DMatrix<f64>,
    mult: &MultiplierSet,
    varrho: f64,
    delta: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>, ConstraintResiduals)> {
    if !(varrho > 0.0) {
        return Err(SpcaError::Domain(format!(
            "penalty must be > 0, got {varrho}"
        )));
    }
    let r = v.ncols();
    for (name, m) in [
        ("delta", delta),
        ("lambda_plus", &mult.lambda_plus),
        ("lambda_minus", &mult.lambda_minus),
        ("mu", &mult.mu),
    ] {
        if m.shape() != (r, r) {
            return Err(shape_err(name, (r, r), m.shape()));
        }
    }
    let (g, w_mat) = apply_quadratic(c, v)?;
    let res = ConstraintResiduals::from_gram(&g, v, delta);
    let a_plus = nonneg_part(&(&mult.lambda_plus + (&res.s - delta) * varrho));
    let a_minus = nonneg_part(&(&mult.lambda_minus - (&res.s + delta) * varrho));
    let w = -g.trace()
        + (a_plus.norm_squared() + a_minus.norm_squared()
            - mult.lambda_plus.norm_squared()
            - mult.lambda_minus.norm_squared())
            / (2.0 * varrho)
        + mult.mu.dot(&res.r)
        + 0.5 * varrho * res.r.norm_squared();
    let inner = DMatrix::<f64>::identity(r, r) - &a_plus + &a_minus;
    let grad = (v * (&mult.mu + &res.r * varrho) - w_mat * inner) * 2.0;
    Ok((w, grad, res))
}

/// `-Tr(V^T S V) + rho . |V|`.
pub fn eval_full_objective(
    c: &CovarianceOperator,
    v: &DMatrix<f64>,
    rho: &DMatrix<f64>,
) -> Result<f64> {
    if rho.shape() != v.shape() {
        return Err(shape_err("rho", v.shape(), rho.shape()));
    }
    let (g, _) = apply_quadratic(c, v)?;
    Ok(-g.trace() + weighted_l1(rho, v))
}

/// Augmented Lagrangian value `w(V) + rho . |V|`.
pub fn eval_lagrangian(
    c: &CovarianceOperator,
    v: &DMatrix<f64>,
    mult: &MultiplierSet,
    varrho: f64,
    spec: &ProblemSpec,
) -> Result<f64> {
    let (w, _, _) = eval_w_and_grad(c, v, mult, varrho, spec.delta())?;
    Ok(w + weighted_l1(spec.rho(), v))
}

/// First-order multiplier update.
pub fn update_multipliers(
    mult: &MultiplierSet,
    varrho: f64,
    res: &ConstraintResiduals,
    delta: &DMatrix<f64>,
) -> MultiplierSet {
    let mut lp = nonneg_part(&(&mult.lambda_plus + (&res.s - delta) * varrho));
    let mut lm = nonneg_part(&(&mult.lambda_minus - (&res.s + delta) * varrho));
    lp.fill_diagonal(0.0);
    lm.fill_diagonal(0.0);
    MultiplierSet {
        lambda_plus: symmetrize(&lp),
        lambda_minus: symmetrize(&lm),
        mu: symmetrize(&(&mult.mu + &res.r * varrho)),
    }
}

/// `max(sigma * varrho, |lambda|^(1 + tau), |mu|^(1 + tau))`.
pub fn update_penalty(state: &PenaltyState, mult: &MultiplierSet) -> PenaltyState {
    let exp = 1.0 + state.tau;
    let varrho = (state.sigma_growth * state.varrho)
        .max(mult.lambda_norm().powf(exp))
        .max(mult.mu_norm().powf(exp));
    PenaltyState { varrho, ..*state }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControllerAction {
    GrewPenalty,
    UpdatedMultipliers,
}

/// Updates either the multipliers (when the violation fell by the factor
/// `gamma`, or on the very first call) or the penalty, never both.
pub fn controller_step(
    state: &PenaltyState,
    mult: &MultiplierSet,
    res: &ConstraintResiduals,
    delta: &DMatrix<f64>,
) -> (PenaltyState, MultiplierSet, ControllerAction) {
    let v = res.violation();
    let decreased = match state.prev_violation {
        None => true,
        Some(prev) => v <= state.gamma * prev,
    };
    if decreased {
        let new_mult = update_multipliers(mult, state.varrho, res, delta);
        let st = PenaltyState {
            prev_violation: Some(v),
            ..*state
        };
        (st, new_mult, ControllerAction::UpdatedMultipliers)
    } else {
        let mut st = update_penalty(state, mult);
        st.prev_violation = Some(v);
        (st, mult.clone(), ControllerAction::GrewPenalty)
    }
}

/// Start point of the next inner solve: the feasible point whenever the
/// previous iterate exceeds the safeguard bound.
pub fn choose_inner_start<'a>(
    v_prev: &'a DMatrix<f64>,
    v_feas: &'a DMatrix<f64>,
    l_at_prev: f64,
    upsilon: f64,
) -> &'a DMatrix<f64> {
    if l_at_prev > upsilon {
        v_feas
    } else {
        v_prev
    }
}

/// Relative gap `|L - f| / max(|f|, 1)`.
pub fn relative_gap(l_value: f64, f_value: f64) -> f64 {
    (l_value - f_value).abs() / f_value.abs().max(1.0)
}

pub fn check_termination(
    c: &CovarianceOperator,
    v: &DMatrix<f64>,
    l_value: f64,
    spec: &ProblemSpec,
    res: &ConstraintResiduals,
) -> Result<bool> {
    let f = eval_full_objective(c, v, spec.rho())?;
    Ok(res.ineq_violation <= spec.eps_i
        && res.eq_violation <= spec.eps_e
        && relative_gap(l_value, f) <= spec.eps_o)
}

/// Distance from `-grad_w` to the subdifferential of `rho . |V|`.
pub fn stationarity_residual(v: &DMatrix<f64>, grad_w: &DMatrix<f64>, rho: &DMatrix<f64>) -> f64 {
    v.iter()
        .zip(grad_w.iter())
        .zip(rho.iter())
        .map(|((&x, &g), &w)| {
            let t = if x != 0.0 {
                (g + w * x.signum()).abs()
            } else {
                (g.abs() - w).max(0.0)
            };
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Which sufficient condition for Robinson's constraint qualification holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RobinsonClass {
    CondA,
    CondB,
    CondC,
    Unknown,
}

impl RobinsonClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RobinsonClass::CondA => "A",
            RobinsonClass::CondB => "B",
            RobinsonClass::CondC => "C",
            RobinsonClass::Unknown => "unknown",
        }
    }
}

/// Classifies an approximately feasible `V`. The inequality constraints are
/// the one-sided pairs `S_ij - delta_ij <= 0` and `-S_ij - delta_ij <= 0`.
pub fn check_robinson(
    c: &CovarianceOperator,
    v: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    tol: f64,
) -> Result<RobinsonClass> {
    let r = v.ncols();
    if delta.shape() != (r, r) {
        return Err(shape_err("delta", (r, r), delta.shape()));
    }
    let (g, w) = apply_quadratic(c, v)?;
    let res = ConstraintResiduals::from_gram(&g, v, delta);
    if res.eq_violation > 1e-3 {
        return Ok(RobinsonClass::Unknown);
    }
    let pairs: Vec<(usize, usize)> = (0..r)
        .flat_map(|i| ((i + 1)..r).map(move |j| (i, j)))
        .collect();

    let zero_delta = pairs.iter().all(|&(i, j)| delta[(i, j)] <= tol);
    let distinct = pairs
        .iter()
        .all(|&(i, j)| (g[(i, i)] - g[(j, j)]).abs() > tol);
    if zero_delta && distinct {
        return Ok(RobinsonClass::CondA);
    }

    let values: Vec<f64> = pairs
        .iter()
        .flat_map(|&(i, j)| {
            let s = res.s[(i, j)];
            [s - delta[(i, j)], -s - delta[(i, j)]]
        })
        .collect();
    let inactive = |x: &f64| *x < -tol;
    let active = |x: &f64| x.abs() <= tol;
    if !values.is_empty() && values.iter().all(inactive) {
        return Ok(RobinsonClass::CondC);
    }
    if values.iter().any(active) && values.iter().any(inactive) {
        let m = w.tr_mul(&w) - g.tr_mul(&g);
        let smin = m.singular_values().min();
        if smin > tol {
            return Ok(RobinsonClass::CondB);
        }
    }
    Ok(RobinsonClass::Unknown)
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub inner_iters: usize,
    pub inner_converged: bool,
    /// Relative stationarity measure at the inner solution.
    pub inner_residual: f64,
    /// Whether the inner solve restarted from the feasible point.
    pub restarted: bool,
    pub lagrangian: f64,
    pub objective: f64,
    pub ineq_violation: f64,
    pub eq_violation: f64,
    pub relative_gap: f64,
    /// Penalty used for this iteration's inner solve.
    pub varrho: f64,
    pub upsilon: f64,
    pub action: ControllerAction,
    #[serde(skip)]
    pub trace: InnerTrace,
}

impl OuterRecord {
    /// The accepted inner solution respects the safeguard bound.
    pub fn safeguard_holds(&self) -> bool {
        self.lagrangian <= self.upsilon + 1e-9 * self.upsilon.abs().max(1.0)
    }
}

struct Snapshot {
    v: DMatrix<f64>,
    violation: f64,
    lagrangian: f64,
    objective: f64,
    inner_residual: f64,
}

/// Runs the augmented Lagrangian method from the leading eigenvectors.
///
/// `cfg.max_iter` is replaced by `spec.inner_max_iter`.
pub fn solve_sparse_pca(
    c: &CovarianceOperator,
    spec: &ProblemSpec,
    cfg: &InnerConfig,
) -> Result<SolveResult> {
    if spec.p() != c.p() {
        return Err(SpcaError::Shape(format!(
            "problem has p = {} but covariance has p = {}",
            spec.p(),
            c.p()
        )));
    }
    let inner_cfg = InnerConfig {
        max_iter: spec.inner_max_iter,
        ..*cfg
    };
    inner_cfg.validate()?;
    let r = spec.r();
    let rho = spec.rho();
    let delta = spec.delta();

    let (v_feas, _) = top_eigenvectors(c, r)?;
    let mut mult = MultiplierSet::initial(r);
    let varrho0 = spec.penalty.initial_varrho;
    let f_feas = eval_full_objective(c, &v_feas, rho)?;
    let (w_feas, _, res_feas) = eval_w_and_grad(c, &v_feas, &mult, varrho0, delta)?;
    let l_feas = w_feas + weighted_l1(rho, &v_feas);
    let mut penalty = PenaltyState::new(&spec.penalty, f_feas.max(l_feas));
    // The controller compares against the violation at the starting point.
    penalty.prev_violation = Some(res_feas.violation());

    let mut v = v_feas.clone();
    let mut history = Vec::new();
    let mut inner_total = 0usize;
    let mut best: Option<Snapshot> = None;
    let mut last: Option<Snapshot> = None;
    let mut status = SolveStatus::MaxOuterIters;

    for k in 0..spec.outer_max_iter {
        let varrho = penalty.varrho;
        let l_prev = eval_lagrangian(c, &v, &mult, varrho, spec)?;
        let restarted = l_prev > penalty.upsilon;
        let start = choose_inner_start(&v, &v_feas, l_prev, penalty.upsilon).clone();

        let mult_k = mult.clone();
        let smooth = |x: &DMatrix<f64>| {
            eval_w_and_grad(c, x, &mult_k, varrho, delta).map(|(w, g, _)| (w, g))
        };
        let mut obj = CompositeObjective::new(smooth, rho.clone())?;
        let out = match solve_inner(&mut obj, &start, &inner_cfg) {
            Ok(out) => out,
            Err(SpcaError::LineSearch { .. }) => {
                status = SolveStatus::InnerStall;
                break;
            }
            Err(e) => return Err(e),
        };
        inner_total += out.iters;
        v = out.x.clone();

        let (w, _, res) = eval_w_and_grad(c, &v, &mult, varrho, delta)?;
        let lagrangian = w + weighted_l1(rho, &v);
        let objective = eval_full_objective(c, &v, rho)?;
        let done = check_termination(c, &v, lagrangian, spec, &res)?;

        let (new_penalty, new_mult, action) = controller_step(&penalty, &mult, &res, delta);
        let record = OuterRecord {
            iteration: k,
            inner_iters: out.iters,
            inner_converged: out.converged,
            inner_residual: out.relative_residual(),
            restarted,
            lagrangian,
            objective,
            ineq_violation: res.ineq_violation,
            eq_violation: res.eq_violation,
            relative_gap: relative_gap(lagrangian, objective),
            varrho,
            upsilon: penalty.upsilon,
            action,
            trace: out.trace.clone(),
        };
        history.push(record);
        penalty = new_penalty;
        mult = new_mult;

        let snap = Snapshot {
            v: v.clone(),
            violation: res.violation(),
            lagrangian,
            objective,
            inner_residual: out.relative_residual(),
        };
        let better = best.as_ref().is_none_or(|b| {
            snap.violation < b.violation
                || (snap.violation == b.violation && snap.objective < b.objective)
        });
        if better {
            best = Some(Snapshot {
                v: snap.v.clone(),
                ..snap
            });
        }
        last = Some(snap);
        if done {
            status = SolveStatus::Converged;
            break;
        }
    }

    let chosen = match status {
        SolveStatus::Converged => last,
        _ => best.or(last),
    };
    let (mut v_out, lagrangian, objective, inner_residual) = match chosen {
        Some(s) => (s.v, s.lagrangian, s.objective, s.inner_residual),
        None => (v_feas.clone(), l_feas, f_feas, f64::NAN),
    };
    v_out.iter_mut().for_each(|x| {
        if x.abs() < ZERO_TOL {
            *x = 0.0;
        }
    });
    normalize_column_signs(&mut v_out);

    let (g, _) = apply_quadratic(c, &v_out)?;
    let residuals = ConstraintResiduals::from_gram(&g, &v_out, delta);
    let robinson = check_robinson(c, &v_out, delta, spec.eps_i)?;
    let metrics = MetricsBundle::compute(c, &v_out)?;
    Ok(SolveResult {
        v: LoadingMatrix::new(v_out),
        multipliers: mult,
        penalty,
        outer_iters: history.len(),
        inner_iters_total: inner_total,
        status,
        metrics,
        residuals,
        lagrangian,
        objective,
        inner_residual,
        robinson,
        history,
    })
}
