//! Penalized regression solvers and cross-validated tuning.
//!
//! All fits standardize the predictors internally (mean 0, population sd 1)
//! and carry an unpenalized intercept; coefficients are reported on the
//! original scale. Zeros in the coefficient vector are exact: they come from
//! the thresholding updates, never from a tolerance comparison.

mod cv;
pub mod penalty;
pub(crate) mod solver;

use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, CvResult};
pub use penalty::Penalty;

use crate::datamodel::{Dataset, SelectionFit, Selector, Task};
use crate::{Error, Result};
use solver::{solve_gaussian, solve_logistic, Design};

pub const DEFAULT_SCAD_A: f64 = 3.7;
pub const DEFAULT_MCP_GAMMA: f64 = 3.0;
pub const DEFAULT_N_LAMBDA: usize = 50;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSpec {
    pub selector: Selector,
    /// SCAD `a` or MCP `gamma`; ignored for the LASSO variants.
    pub penalty_shape: f64,
    /// Strictly decreasing grid. `None` means 50 log-spaced values from the
    /// null-model threshold down to 1% of it, computed per dataset.
    pub lambda_grid: Option<Vec<f64>>,
    pub cv_folds: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl SelectorSpec {
    pub fn new(selector: Selector) -> Self {
        let penalty_shape = match selector {
            Selector::Scad => DEFAULT_SCAD_A,
            Selector::Mcp => DEFAULT_MCP_GAMMA,
            _ => 0.0,
        };
        SelectorSpec { selector, penalty_shape, lambda_grid: None, cv_folds: 10, max_iter: 10_000, tol: 1e-7 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.selector {
            Selector::Scad if self.penalty_shape <= 2.0 => {
                return Err(Error::InvalidParameter(format!("SCAD a must exceed 2, got {}", self.penalty_shape)))
            }
            Selector::Mcp if self.penalty_shape <= 1.0 => {
                return Err(Error::InvalidParameter(format!("MCP gamma must exceed 1, got {}", self.penalty_shape)))
            }
            _ => {}
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::InvalidParameter("lambda grid must be non-empty and positive".into()));
            }
            if grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::InvalidParameter("lambda grid must be strictly decreasing".into()));
            }
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidParameter("need at least 2 cross-validation folds".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("tol must be positive and max_iter non-zero".into()));
        }
        Ok(())
    }

    pub fn penalty(&self) -> Penalty {
        match self.selector {
            Selector::Lasso | Selector::ScaledLasso => Penalty::Lasso,
            Selector::Scad => Penalty::Scad(self.penalty_shape),
            Selector::Mcp => Penalty::Mcp(self.penalty_shape),
        }
    }

    /// The explicit grid, or the default grid for `data`.
    pub fn grid_for(&self, data: &Dataset) -> Vec<f64> {
        match &self.lambda_grid {
            Some(g) => g.clone(),
            None => default_grid(lambda_max(data), DEFAULT_N_LAMBDA, DEFAULT_LAMBDA_MIN_RATIO),
        }
    }
}

/// Smallest penalty at which the all-zero model is a stationary point.
pub fn lambda_max(data: &Dataset) -> f64 {
    Design::new(data).lambda_max()
}

pub fn default_grid(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    let top = if lambda_max > 0.0 { lambda_max } else { 1e-3 };
    if n_lambda == 1 {
        return vec![top];
    }
    (0..n_lambda)
        .map(|k| top * min_ratio.powf(k as f64 / (n_lambda - 1) as f64))
        .collect()
}

fn check_task(data: &Dataset, spec: &SelectorSpec) -> Result<()> {
    spec.validate()?;
    if data.task() == Task::Logistic && spec.selector == Selector::ScaledLasso {
        return Err(Error::InvalidInput("the scaled LASSO is only defined for the linear model".into()));
    }
    Ok(())
}

fn build_fit(d: &Design, task: Task, spec: &SelectorSpec, lambda: f64, b0: f64, b: &[f64], iterations: usize) -> SelectionFit {
    let (beta, intercept) = d.to_original(task, b0, b);
    let support = beta.iter().map(|&v| v != 0.0).collect();
    SelectionFit { beta, intercept, support, lambda, selector: spec.selector, sigma_hat: None, iterations }
}

fn initial_state(d: &Design, task: Task, warm: Option<&SelectionFit>) -> (f64, Vec<f64>) {
    match warm {
        Some(w) if w.beta.len() == d.p => d.to_standardized(task, w.intercept, &w.beta),
        _ => {
            let b0 = match task {
                Task::Linear => 0.0,
                Task::Logistic => {
                    let m = d.y_mean.clamp(1e-6, 1.0 - 1e-6);
                    (m / (1.0 - m)).ln()
                }
            };
            (b0, vec![0.0; d.p])
        }
    }
}

fn solve_at(
    d: &Design,
    task: Task,
    spec: &SelectorSpec,
    lambda: f64,
    b0: &mut f64,
    b: &mut [f64],
) -> solver::SolveOutcome {
    match task {
        Task::Linear => solve_gaussian(d, lambda, spec.penalty(), b, spec.tol, spec.max_iter),
        Task::Logistic => solve_logistic(d, lambda, spec.penalty(), b0, b, spec.tol, spec.max_iter),
    }
}

/// Penalized fit at a single `lambda`, optionally warm-started.
///
/// For [`Selector::ScaledLasso`] this is a plain LASSO fit at `lambda`; use
/// [`fit_scaled_lasso`] for the joint scale estimate.
pub fn fit_path(data: &Dataset, spec: &SelectorSpec, lambda: f64, warm_start: Option<&SelectionFit>) -> Result<SelectionFit> {
    check_task(data, spec)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let d = Design::new(data);
    let (mut b0, mut b) = initial_state(&d, data.task(), warm_start);
    let out = solve_at(&d, data.task(), spec, lambda, &mut b0, &mut b);
    let fit = build_fit(&d, data.task(), spec, lambda, b0, &b, out.iterations);
    if out.converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence { iterations: out.iterations, last: Some(Box::new(fit)) })
    }
}

/// Fits along `grid` (descending) with warm starts, returning one fit per
/// grid value. A non-converged point keeps its last iterate and the path
/// continues; the count of such points is returned alongside.
pub fn fit_grid(data: &Dataset, spec: &SelectorSpec, grid: &[f64]) -> Result<(Vec<SelectionFit>, usize)> {
    check_task(data, spec)?;
    let d = Design::new(data);
    let (mut b0, mut b) = initial_state(&d, data.task(), None);
    let mut fits = Vec::with_capacity(grid.len());
    let mut failures = 0;
    for &lambda in grid {
        let out = solve_at(&d, data.task(), spec, lambda, &mut b0, &mut b);
        if !out.converged {
            failures += 1;
        }
        fits.push(build_fit(&d, data.task(), spec, lambda, b0, &b, out.iterations));
    }
    Ok((fits, failures))
}

/// Fit at `lambda` reached by following the default grid from the null
/// model, which pins down which local solution the nonconvex penalties
/// land on.
pub fn fit_following_path(data: &Dataset, spec: &SelectorSpec, lambda: f64) -> Result<SelectionFit> {
    check_task(data, spec)?;
    let d = Design::new(data);
    let (mut b0, mut b) = initial_state(&d, data.task(), None);
    let grid = spec.grid_for(data);
    for &l in grid.iter().filter(|&&l| l > lambda) {
        solve_at(&d, data.task(), spec, l, &mut b0, &mut b);
    }
    let out = solve_at(&d, data.task(), spec, lambda, &mut b0, &mut b);
    let fit = build_fit(&d, data.task(), spec, lambda, b0, &b, out.iterations);
    if out.converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence { iterations: out.iterations, last: Some(Box::new(fit)) })
    }
}

/// Universal penalty level `sqrt(2 log p / n)` of the scaled LASSO.
pub fn scaled_lasso_lambda0(n: usize, p: usize) -> f64 {
    (2.0 * (p.max(2) as f64).ln() / n as f64).sqrt()
}

/// Scaled LASSO: alternate `sigma <- ||y - X beta|| / sqrt(n)`,
/// `lambda <- lambda0 * sigma`, `beta <- LASSO(lambda)` until sigma settles.
pub fn fit_scaled_lasso(data: &Dataset, spec: &SelectorSpec) -> Result<SelectionFit> {
    fit_scaled_lasso_warm(data, spec, None)
}

pub fn fit_scaled_lasso_warm(data: &Dataset, spec: &SelectorSpec, warm: Option<&SelectionFit>) -> Result<SelectionFit> {
    spec.validate()?;
    if data.task() != Task::Linear {
        return Err(Error::InvalidInput("the scaled LASSO is only defined for the linear model".into()));
    }
    let d = Design::new(data);
    let n = d.n as f64;
    let lambda0 = scaled_lasso_lambda0(d.n, d.p);
    let (_, mut b) = initial_state(&d, Task::Linear, warm);
    let residual_scale = |b: &[f64]| -> f64 {
        let eta = solver::linear_predictor(&d, d.y_mean, b);
        (d.y.iter().zip(&eta).map(|(y, e)| (y - e) * (y - e)).sum::<f64>() / n).sqrt()
    };
    let mut sigma = residual_scale(&b);
    let floor = 1e-10 * (1.0 + d.y_mean.abs());
    let mut iterations = 0;
    for _ in 0..100 {
        if !(sigma > floor) {
            return Err(Error::ZeroResidual);
        }
        let lambda = lambda0 * sigma;
        let out = solve_gaussian(&d, lambda, Penalty::Lasso, &mut b, spec.tol, spec.max_iter);
        iterations += out.iterations;
        let next = residual_scale(&b);
        let settled = (next - sigma).abs() < spec.tol;
        sigma = next;
        if settled && out.converged {
            if !(sigma > floor) {
                return Err(Error::ZeroResidual);
            }
            let mut fit = build_fit(&d, Task::Linear, spec, lambda0 * sigma, 0.0, &b, iterations);
            fit.selector = Selector::ScaledLasso;
            fit.sigma_hat = Some(sigma);
            return Ok(fit);
        }
    }
    let mut fit = build_fit(&d, Task::Linear, spec, lambda0 * sigma, 0.0, &b, iterations);
    fit.sigma_hat = Some(sigma);
    Err(Error::NonConvergence { iterations, last: Some(Box::new(fit)) })
}

/// Penalized objective on the standardized scale: `1/(2n) RSS + sum P` for
/// the linear model, mean negative log-likelihood plus penalty for logistic.
pub fn objective(data: &Dataset, spec: &SelectorSpec, fit: &SelectionFit) -> f64 {
    let d = Design::new(data);
    let (b0, b) = d.to_standardized(data.task(), fit.intercept, &fit.beta);
    let pen = spec.penalty();
    match data.task() {
        Task::Linear => {
            let eta = solver::linear_predictor(&d, d.y_mean, &b);
            let rss: f64 = d.y.iter().zip(&eta).map(|(y, e)| (y - e) * (y - e)).sum();
            rss / (2.0 * d.n as f64) + b.iter().map(|&v| pen.value(v, fit.lambda)).sum::<f64>()
        }
        Task::Logistic => solver::logistic_objective(&d, fit.lambda, pen, b0, &b),
    }
}

/// Largest violation of the stationarity conditions on the standardized
/// scale: `|g_j| - lambda` for zero coefficients and
/// `|g_j - P'(|b_j|) sign(b_j)|` otherwise, where `g_j` is the negative loss
/// gradient. Zero means an exact stationary point.
pub fn kkt_violation(data: &Dataset, spec: &SelectorSpec, fit: &SelectionFit) -> f64 {
    let d = Design::new(data);
    let (b0, b) = d.to_standardized(data.task(), fit.intercept, &fit.beta);
    let pen = spec.penalty();
    let resid: Vec<f64> = match data.task() {
        Task::Linear => {
            let eta = solver::linear_predictor(&d, d.y_mean, &b);
            d.y.iter().zip(&eta).map(|(y, e)| y - e).collect()
        }
        Task::Logistic => {
            let eta = solver::linear_predictor(&d, b0, &b);
            d.y.iter().zip(&eta).map(|(y, e)| y - 1.0 / (1.0 + (-e).exp())).collect()
        }
    };
    (0..d.p)
        .filter(|&j| d.usable(j))
        .map(|j| {
            let g = solver::dot(d.col(j), &resid) / d.n as f64;
            if b[j] == 0.0 {
                (g.abs() - pen.derivative(0.0, fit.lambda)).max(0.0)
            } else {
                (g - pen.derivative(b[j], fit.lambda) * b[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Relative stationarity tolerance under which a fit that hit the
/// iteration cap is still used.
pub const NEAR_STATIONARY_RTOL: f64 = 1e-3;

/// Turns a [`Error::NonConvergence`] whose last iterate violates the
/// stationarity conditions by at most `NEAR_STATIONARY_RTOL * lambda` into
/// that iterate. Coordinate descent near the interpolation regime (`p > n`,
/// small `lambda`) can creep for many sweeps after the support has settled.
pub fn accept_near_stationary(data: &Dataset, spec: &SelectorSpec, r: Result<SelectionFit>) -> Result<SelectionFit> {
    match r {
        Err(Error::NonConvergence { iterations, last: Some(fit) })
            if kkt_violation(data, spec, &fit) <= NEAR_STATIONARY_RTOL * fit.lambda =>
        {
            log::debug!("using near-stationary fit after {iterations} iterations");
            Ok(*fit)
        }
        other => other,
    }
}
