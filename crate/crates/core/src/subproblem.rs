//! Nonmonotone proximal-gradient methods for `F(x) = f(x) + rho . |x|` over
//! the full space, using the scalar metric `H = alpha^-1 I` so the direction
//! subproblem has a closed-form soft-thresholding solution.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{shape_err, Result, SpcaError};

/// Smooth part of a composite objective: returns `(f(x), grad f(x))`.
pub trait SmoothObjective {
    fn eval(&mut self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>;
}

impl<F> SmoothObjective for F
where
    F: FnMut(&DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>,
{
    fn eval(&mut self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self(x)
    }
}

/// `f(x) + weights . |x|`.
pub struct CompositeObjective<S> {
    pub smooth: S,
    pub weights: DMatrix<f64>,
}

impl<S: SmoothObjective> CompositeObjective<S> {
    pub fn new(smooth: S, weights: DMatrix<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(SpcaError::Domain("penalty weights must be >= 0".into()));
        }
        Ok(Self { smooth, weights })
    }

    pub fn penalty(&self, x: &DMatrix<f64>) -> f64 {
        weighted_l1(&self.weights, x)
    }

    /// Returns `(F(x), grad f(x))`.
    fn eval(&mut self, x: &DMatrix<f64>, iteration: usize) -> Result<(f64, DMatrix<f64>)> {
        let (f, g) = self.smooth.eval(x)?;
        let total = f + self.penalty(x);
        if !total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(SpcaError::NonFinite {
                iteration,
                iterate: x.clone(),
            });
        }
        Ok((total, g))
    }
}

fn weighted_l1(w: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    w.iter().zip(x.iter()).map(|(w, x)| w * x.abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InnerMethod {
    MethodI,
    MethodII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerConfig {
    pub method: InnerMethod,
    /// Nonmonotone memory: the reference value is the max of the last `M + 1` values.
    pub memory: usize,
    pub sigma_ls: f64,
    pub eta_i: f64,
    pub eta_ii: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eps_inner: f64,
    pub max_iter: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            method: InnerMethod::MethodII,
            memory: 10,
            sigma_ls: 1e-4,
            eta_i: 2.0,
            eta_ii: 0.5,
            alpha_min: 1e-15,
            alpha_max: 1.0,
            eps_inner: 1e-4,
            max_iter: 5000,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_min > 0.0
            && self.alpha_min < self.alpha_max
            && self.eta_i > 1.0
            && self.eta_ii > 0.0
            && self.eta_ii < 1.0
            && self.sigma_ls > 0.0
            && self.sigma_ls < 1.0
            && self.eps_inner > 0.0
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(SpcaError::Domain(format!(
                "invalid inner configuration {self:?}"
            )))
        }
    }
}

/// Per-iteration record of an inner run, kept for invariant checks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InnerTrace {
    /// `F(x^k)` for every iterate, starting with `x^0`.
    pub values: Vec<f64>,
    /// Reference maximum used to accept step `k`.
    pub references: Vec<f64>,
    /// Sufficient-decrease term `sigma * lambda * Delta_k` of step `k`.
    pub decrease_terms: Vec<f64>,
    /// Accepted step length (Method II) or step scalar (Method I) of step `k`.
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub x: DMatrix<f64>,
    /// `F` at `x`.
    pub value: f64,
    pub grad: DMatrix<f64>,
    /// `max |d_I(x)|`, the unscaled stationarity measure at `x`.
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub trace: InnerTrace,
}

impl InnerOutcome {
    /// `max |d_I(x)| / max(|F(x)|, 1)`, the quantity compared against `eps_inner`.
    pub fn relative_residual(&self) -> f64 {
        self.residual / self.value.abs().max(1.0)
    }
}

/// Minimizer of `grad . d + |d|^2 / (2 alpha) + rho . |x + d|`.
pub fn soft_threshold_direction(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    alpha: f64,
    rho: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) {
        return Err(SpcaError::Domain(format!(
            "step scalar must be > 0, got {alpha}"
        )));
    }
    if grad.shape() != x.shape() {
        return Err(shape_err("gradient", x.shape(), grad.shape()));
    }
    if rho.shape() != x.shape() {
        return Err(shape_err("penalty weights", x.shape(), rho.shape()));
    }
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let xi = x[(i, j)];
        let c = xi - alpha * grad[(i, j)];
        let mag = (c.abs() - alpha * rho[(i, j)]).max(0.0);
        c.signum() * mag - xi
    }))
}

/// `d_I(x)`: the direction at unit step scalar, zero exactly at stationary points.
pub fn stationarity_residual_map(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    rho: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    soft_threshold_direction(x, grad, 1.0, rho)
}

/// Barzilai-Borwein scalar `|s|^2 / s . y`, clamped, with `alpha_max` for
/// `s . y <= 0` or a repeated iterate.
pub fn bb_steplength(
    x_k: &DMatrix<f64>,
    x_prev: &DMatrix<f64>,
    g_k: &DMatrix<f64>,
    g_prev: &DMatrix<f64>,
    alpha_min: f64,
    alpha_max: f64,
) -> f64 {
    let s = x_k - x_prev;
    let y = g_k - g_prev;
    let a = s.norm_squared();
    let b = s.dot(&y);
    if b <= 0.0 || a == 0.0 {
        return alpha_max;
    }
    (a / b).clamp(alpha_min, alpha_max)
}

/// `grad . d + rho . |x + d| - rho . |x|`.
pub fn delta_model(
    grad: &DMatrix<f64>,
    d: &DMatrix<f64>,
    x: &DMatrix<f64>,
    rho: &DMatrix<f64>,
) -> f64 {
    let xd = x + d;
    grad.dot(d) + weighted_l1(rho, &xd) - weighted_l1(rho, x)
}

struct History {
    cap: usize,
    vals: VecDeque<f64>,
}

impl History {
    fn new(memory: usize, f0: f64) -> Self {
        let mut vals = VecDeque::with_capacity(memory + 1);
        vals.push_back(f0);
        Self {
            cap: memory + 1,
            vals,
        }
    }

    fn reference(&self) -> f64 {
        self.vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn push(&mut self, f: f64) {
        if self.vals.len() == self.cap {
            self.vals.pop_front();
        }
        self.vals.push_back(f);
    }
}

const MAX_BACKTRACKS: usize = 60;
const MAX_METRIC_INCREASES: usize = 200;

/// Method I: scale the metric until the nonmonotone acceptance test holds
/// for the full step `x + d`.
pub fn solve_method_i<S: SmoothObjective>(
    obj: &mut CompositeObjective<S>,
    x0: &DMatrix<f64>,
    cfg: &InnerConfig,
) -> Result<InnerOutcome> {
    solve(obj, x0, cfg, InnerMethod::MethodI)
}

/// Method II: fixed metric from the BB scalar, backtracking on the step length.
pub fn solve_method_ii<S: SmoothObjective>(
    obj: &mut CompositeObjective<S>,
    x0: &DMatrix<f64>,
    cfg: &InnerConfig,
) -> Result<InnerOutcome> {
    solve(obj, x0, cfg, InnerMethod::MethodII)
}

/// Dispatches on `cfg.method`.
pub fn solve_inner<S: SmoothObjective>(
    obj: &mut CompositeObjective<S>,
    x0: &DMatrix<f64>,
    cfg: &InnerConfig,
) -> Result<InnerOutcome> {
    solve(obj, x0, cfg, cfg.method)
}

fn solve<S: SmoothObjective>(
    obj: &mut CompositeObjective<S>,
    x0: &DMatrix<f64>,
    cfg: &InnerConfig,
    method: InnerMethod,
) -> Result<InnerOutcome> {
    cfg.validate()?;
    if obj.weights.shape() != x0.shape() {
        return Err(shape_err(
            "penalty weights",
            x0.shape(),
            obj.weights.shape(),
        ));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SpcaError::NonFinite {
            iteration: 0,
            iterate: x0.clone(),
        });
    }
    let rho = obj.weights.clone();
    let mut x = x0.clone();
    let (mut fx, mut g) = obj.eval(&x, 0)?;
    let mut trace = InnerTrace {
        values: vec![fx],
        ..InnerTrace::default()
    };
    let mut hist = History::new(cfg.memory, fx);

    let mut d_unit = stationarity_residual_map(&x, &g, &rho)?;
    let mut resid = d_unit.amax();
    if resid == 0.0 {
        return Ok(InnerOutcome {
            x,
            value: fx,
            grad: g,
            residual: 0.0,
            iters: 0,
            converged: true,
            trace,
        });
    }
    let mut alpha = (1.0 / resid).clamp(cfg.alpha_min, cfg.alpha_max);

    for k in 0..cfg.max_iter {
        if resid / fx.abs().max(1.0) <= cfg.eps_inner {
            return Ok(InnerOutcome {
                x,
                value: fx,
                grad: g,
                residual: resid,
                iters: k,
                converged: true,
                trace,
            });
        }
        let reference = hist.reference();
        let (x_new, f_new, g_new, decrease, step) = match method {
            InnerMethod::MethodII => {
                let d = soft_threshold_direction(&x, &g, alpha, &rho)?;
                let delta = delta_model(&g, &d, &x, &rho);
                let mut lambda = 1.0;
                let mut accepted = None;
                for _ in 0..MAX_BACKTRACKS {
                    let trial = &x + &d * lambda;
                    let (ft, gt) = obj.eval(&trial, k + 1)?;
                    let term = cfg.sigma_ls * lambda * delta;
                    if ft <= reference + term {
                        accepted = Some((trial, ft, gt, term, lambda));
                        break;
                    }
                    lambda *= cfg.eta_ii;
                }
                accepted.ok_or(SpcaError::LineSearch {
                    iteration: k,
                    trials: MAX_BACKTRACKS,
                })?
            }
            InnerMethod::MethodI => {
                let mut a_trial = alpha;
                let mut accepted = None;
                for _ in 0..MAX_METRIC_INCREASES {
                    let d = soft_threshold_direction(&x, &g, a_trial, &rho)?;
                    let delta = delta_model(&g, &d, &x, &rho);
                    let trial = &x + &d;
                    let (ft, gt) = obj.eval(&trial, k + 1)?;
                    let term = cfg.sigma_ls * delta;
                    if ft <= reference + term {
                        accepted = Some((trial, ft, gt, term, a_trial));
                        break;
                    }
                    a_trial /= cfg.eta_i;
                }
                accepted.ok_or(SpcaError::LineSearch {
                    iteration: k,
                    trials: MAX_METRIC_INCREASES,
                })?
            }
        };
        alpha = bb_steplength(&x_new, &x, &g_new, &g, cfg.alpha_min, cfg.alpha_max);
        trace.references.push(reference);
        trace.decrease_terms.push(decrease);
        trace.steps.push(step);
        trace.values.push(f_new);
        hist.push(f_new);
        x = x_new;
        fx = f_new;
        g = g_new;
        d_unit = stationarity_residual_map(&x, &g, &rho)?;
        resid = d_unit.amax();
    }
    let converged = resid / fx.abs().max(1.0) <= cfg.eps_inner;
    Ok(InnerOutcome {
        x,
        value: fx,
        grad: g,
        residual: resid,
        iters: cfg.max_iter,
        converged,
        trace,
    })
}
