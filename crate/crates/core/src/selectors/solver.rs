//! Coordinate-descent solvers on a standardized design.

use crate::datamodel::{Dataset, Task};

use super::penalty::Penalty;

/// Standardized design stored column-major, plus the scaling needed to map
/// coefficients back to the original predictor scale.
pub(crate) struct Design {
    pub n: usize,
    pub p: usize,
    cols: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub y: Vec<f64>,
    pub y_mean: f64,
}

impl Design {
    pub fn new(data: &Dataset) -> Self {
        let (n, p) = (data.n(), data.p());
        let mean = data.column_means().to_vec();
        let sd = data.column_sds().to_vec();
        let x = data.x();
        let mut cols = vec![0.0; n * p];
        for j in 0..p {
            if sd[j] > 0.0 {
                let col = &mut cols[j * n..(j + 1) * n];
                for i in 0..n {
                    col[i] = (x[[i, j]] - mean[j]) / sd[j];
                }
            }
        }
        let y = data.y().to_vec();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        Design { n, p, cols, mean, sd, y, y_mean }
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn usable(&self, j: usize) -> bool {
        self.sd[j] > 0.0
    }

    /// Largest `|z_j' (y - ybar)| / n`: the smallest penalty level at which
    /// the all-zero coefficient vector is stationary.
    pub fn lambda_max(&self) -> f64 {
        let yc: Vec<f64> = self.y.iter().map(|v| v - self.y_mean).collect();
        (0..self.p)
            .filter(|&j| self.usable(j))
            .map(|j| dot(self.col(j), &yc).abs() / self.n as f64)
            .fold(0.0, f64::max)
    }

    /// Original-scale coefficients and intercept from standardized ones.
    /// For the linear model `b0` is ignored (the response is centred).
    pub fn to_original(&self, task: Task, b0: f64, b: &[f64]) -> (Vec<f64>, f64) {
        let beta: Vec<f64> = (0..self.p)
            .map(|j| if b[j] != 0.0 && self.usable(j) { b[j] / self.sd[j] } else { 0.0 })
            .collect();
        let shift: f64 = beta.iter().zip(&self.mean).map(|(bj, m)| bj * m).sum();
        let intercept = match task {
            Task::Linear => self.y_mean - shift,
            Task::Logistic => b0 - shift,
        };
        (beta, intercept)
    }

    /// Inverse of [`Design::to_original`], used for warm starts.
    pub fn to_standardized(&self, task: Task, intercept: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let b: Vec<f64> = (0..self.p)
            .map(|j| if self.usable(j) { beta[j] * self.sd[j] } else { 0.0 })
            .collect();
        let shift: f64 = beta.iter().zip(&self.mean).map(|(bj, m)| bj * m).sum();
        let b0 = match task {
            Task::Linear => 0.0,
            Task::Logistic => intercept + shift,
        };
        (b0, b)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) struct SolveOutcome {
    pub iterations: usize,
    pub converged: bool,
}

/// Penalized least squares `1/(2n) ||y - ybar - Z b||^2 + sum P(|b_j|)`.
///
/// Cycles full sweeps and active-set sweeps until the largest coefficient
/// change in a full sweep drops below `tol`.
pub(crate) fn solve_gaussian(
    d: &Design,
    lambda: f64,
    pen: Penalty,
    b: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> SolveOutcome {
    let n = d.n as f64;
    let mut r: Vec<f64> = d.y.iter().map(|v| v - d.y_mean).collect();
    for j in 0..d.p {
        if b[j] != 0.0 {
            if d.usable(j) {
                axpy(-b[j], d.col(j), &mut r);
            } else {
                b[j] = 0.0;
            }
        }
    }
    let mut iterations = 0;
    let update = |j: usize, b: &mut [f64], r: &mut [f64]| -> f64 {
        let col = d.col(j);
        let u = dot(col, r) / n + b[j];
        let new = pen.threshold(u, 1.0, lambda);
        let delta = new - b[j];
        if delta != 0.0 {
            axpy(-delta, col, r);
            b[j] = new;
        }
        delta.abs()
    };
    while iterations < max_iter {
        let mut max_delta: f64 = 0.0;
        for j in 0..d.p {
            if d.usable(j) {
                max_delta = max_delta.max(update(j, b, &mut r));
            }
        }
        iterations += 1;
        if max_delta < tol {
            return SolveOutcome { iterations, converged: true };
        }
        let active: Vec<usize> = (0..d.p).filter(|&j| b[j] != 0.0).collect();
        while iterations < max_iter {
            let mut max_delta: f64 = 0.0;
            for &j in &active {
                max_delta = max_delta.max(update(j, b, &mut r));
            }
            iterations += 1;
            if max_delta < tol {
                break;
            }
        }
    }
    SolveOutcome { iterations, converged: false }
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

#[inline]
fn log1pexp(eta: f64) -> f64 {
    if eta > 35.0 {
        eta
    } else if eta < -35.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

pub(crate) fn linear_predictor(d: &Design, b0: f64, b: &[f64]) -> Vec<f64> {
    let mut eta = vec![b0; d.n];
    for j in 0..d.p {
        if b[j] != 0.0 {
            axpy(b[j], d.col(j), &mut eta);
        }
    }
    eta
}

/// Mean binomial negative log-likelihood.
pub(crate) fn logistic_loss(d: &Design, eta: &[f64]) -> f64 {
    eta.iter().zip(&d.y).map(|(&e, &y)| log1pexp(e) - y * e).sum::<f64>() / d.n as f64
}

pub(crate) fn logistic_objective(d: &Design, lambda: f64, pen: Penalty, b0: f64, b: &[f64]) -> f64 {
    let eta = linear_predictor(d, b0, b);
    logistic_loss(d, &eta) + b.iter().map(|&v| pen.value(v, lambda)).sum::<f64>()
}

/// Penalized logistic regression by proximal Newton: a quadratic
/// approximation of the deviance around the current fit, minimized by
/// weighted coordinate descent, with step halving if the penalized
/// objective increases.
pub(crate) fn solve_logistic(
    d: &Design,
    lambda: f64,
    pen: Penalty,
    b0: &mut f64,
    b: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> SolveOutcome {
    let n = d.n as f64;
    for j in 0..d.p {
        if !d.usable(j) {
            b[j] = 0.0;
        }
    }
    let mut iterations = 0;
    let mut obj = logistic_objective(d, lambda, pen, *b0, b);
    for _outer in 0..200 {
        let eta = linear_predictor(d, *b0, b);
        let mut w = vec![0.0; d.n];
        let mut r = vec![0.0; d.n];
        for i in 0..d.n {
            let mu = sigmoid(eta[i]).clamp(1e-10, 1.0 - 1e-10);
            w[i] = (mu * (1.0 - mu)).max(1e-5);
            r[i] = (d.y[i] - mu) / w[i];
        }
        let wsum: f64 = w.iter().sum();
        let v: Vec<f64> = (0..d.p)
            .map(|j| if d.usable(j) { d.col(j).iter().zip(&w).map(|(z, wi)| wi * z * z).sum::<f64>() / n } else { 0.0 })
            .collect();
        let (old_b0, old_b) = (*b0, b.to_vec());

        let update = |j: usize, b: &mut [f64], r: &mut [f64]| -> f64 {
            if v[j] <= 0.0 {
                return 0.0;
            }
            let col = d.col(j);
            let u = col.iter().zip(r.iter()).zip(&w).map(|((z, ri), wi)| wi * z * ri).sum::<f64>() / n + v[j] * b[j];
            let new = pen.threshold(u, v[j], lambda);
            let delta = new - b[j];
            if delta != 0.0 {
                axpy(-delta, col, r);
                b[j] = new;
            }
            delta.abs()
        };
        let intercept = |b0: &mut f64, r: &mut [f64]| -> f64 {
            let delta = r.iter().zip(&w).map(|(ri, wi)| wi * ri).sum::<f64>() / wsum;
            *b0 += delta;
            r.iter_mut().for_each(|ri| *ri -= delta);
            delta.abs()
        };

        // Inner weighted least squares.
        let mut inner = 0;
        loop {
            let mut max_delta = intercept(b0, &mut r);
            for j in 0..d.p {
                max_delta = max_delta.max(update(j, b, &mut r));
            }
            inner += 1;
            iterations += 1;
            if max_delta < tol || iterations >= max_iter {
                break;
            }
            let active: Vec<usize> = (0..d.p).filter(|&j| b[j] != 0.0).collect();
            loop {
                let mut md = intercept(b0, &mut r);
                for &j in &active {
                    md = md.max(update(j, b, &mut r));
                }
                iterations += 1;
                if md < tol || iterations >= max_iter {
                    break;
                }
            }
            if inner > 1000 {
                break;
            }
        }

        let mut new_obj = logistic_objective(d, lambda, pen, *b0, b);
        let mut step = 1.0;
        let (full_b0, full_b) = (*b0, b.to_vec());
        while new_obj > obj + 1e-12 * (1.0 + obj.abs()) && step > 1e-6 {
            step *= 0.5;
            *b0 = old_b0 + step * (full_b0 - old_b0);
            for j in 0..d.p {
                let t = old_b[j] + step * (full_b[j] - old_b[j]);
                // Keep exact zeros from the penalized step.
                b[j] = if full_b[j] == 0.0 && old_b[j] == 0.0 { 0.0 } else { t };
            }
            new_obj = logistic_objective(d, lambda, pen, *b0, b);
        }
        if new_obj > obj + 1e-12 * (1.0 + obj.abs()) {
            *b0 = old_b0;
            b.copy_from_slice(&old_b);
            return SolveOutcome { iterations, converged: true };
        }
        obj = new_obj;
        let change = old_b
            .iter()
            .zip(b.iter())
            .map(|(o, c)| (o - c).abs())
            .fold((old_b0 - *b0).abs(), f64::max);
        if change < tol {
            return SolveOutcome { iterations, converged: true };
        }
        if iterations >= max_iter {
            break;
        }
    }
    SolveOutcome { iterations, converged: false }
}
