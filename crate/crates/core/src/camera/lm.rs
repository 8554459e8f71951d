//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense least-squares
//! problems.

use nalgebra::{DMatrix, DVector};

/// A residual function with an optional analytic Jacobian.
pub trait LeastSquares {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobian `d residuals / d params`; `None` selects central
    /// differences.
    fn jacobian(&self, _params: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Adapts a residual closure; the Jacobian is numeric.
pub struct Residuals<F>(pub F);

impl<F> LeastSquares for Residuals<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        (self.0)(params)
    }
}

/// Adapts a residual closure paired with an analytic Jacobian closure.
pub struct WithJacobian<F, J>(pub F, pub J);

impl<F, J> LeastSquares for WithJacobian<F, J>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        (self.0)(params)
    }

    fn jacobian(&self, params: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some((self.1)(params))
    }
}

/// Central differences with step `1e-6 * max(1, |p_i|)`.
pub fn numeric_jacobian<F>(f: F, params: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(params).len();
    let n = params.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = params.clone();
    for j in 0..n {
        let h = 1e-6 * params[j].abs().max(1.0);
        probe[j] = params[j] + h;
        let plus = f(&probe);
        probe[j] = params[j] - h;
        let minus = f(&probe);
        probe[j] = params[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Initial damping, relative to the diagonal of `J^T J`.
    pub lambda0: f64,
    /// Stops when `|J^T r|_inf < tol` or `|step| < tol * (|params| + tol)`.
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            lambda0: 1e-3,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub status: LmStatus,
    /// Accepted steps.
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("residuals are not finite at the initial parameters")]
    NonFiniteInit,
    #[error("{params} parameters exceed {residuals} residuals")]
    Underdetermined { params: usize, residuals: usize },
    #[error("normal equations stay singular under damping")]
    Singular,
}

const LAMBDA_MAX: f64 = 1e16;

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    init: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport, LmError> {
    let jacobian = |p: &DVector<f64>| {
        problem
            .jacobian(p)
            .unwrap_or_else(|| numeric_jacobian(|q| problem.residuals(q), p))
    };
    let mut params = init;
    let mut r = problem.residuals(&params);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(LmError::NonFiniteInit);
    }
    if params.len() > r.len() {
        return Err(LmError::Underdetermined {
            params: params.len(),
            residuals: r.len(),
        });
    }
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let mut jac = jacobian(&params);

    let finish = |params, cost, status, iterations, history| LmReport {
        params,
        cost,
        status,
        iterations,
        cost_history: history,
    };

    while iterations < opts.max_iter {
        let gradient = jac.tr_mul(&r);
        if gradient.amax() < opts.tol {
            return Ok(finish(params, cost, LmStatus::GradientTolerance, iterations, history));
        }
        let normal = jac.tr_mul(&jac);
        let diag_max = normal.diagonal().amax().max(f64::MIN_POSITIVE);
        let accepted = loop {
            if lambda > LAMBDA_MAX {
                break None;
            }
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * normal[(i, i)].max(1e-12 * diag_max);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&gradient);
            if step.norm() < opts.tol * (params.norm() + opts.tol) {
                return Ok(finish(params, cost, LmStatus::StepTolerance, iterations, history));
            }
            let candidate = &params + &step;
            let r_new = problem.residuals(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                lambda = (lambda / 10.0).max(1e-15);
                break Some((candidate, r_new, cost_new));
            }
            lambda *= 10.0;
        };
        match accepted {
            Some((p, r_new, c)) => {
                params = p;
                r = r_new;
                cost = c;
                history.push(cost);
                iterations += 1;
                jac = jacobian(&params);
            }
            None => {
                if normal.clone().cholesky().is_none() && gradient.amax() > opts.tol.sqrt() {
                    return Err(LmError::Singular);
                }
                // No descent direction left at working precision.
                return Ok(finish(params, cost, LmStatus::StepTolerance, iterations, history));
            }
        }
    }
    Ok(finish(params, cost, LmStatus::MaxIterations, iterations, history))
}
