use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::solver::{linear_predictor, solve_gaussian, solve_logistic, Design};
use super::SelectorSpec;
use crate::datamodel::{Dataset, Task};
use crate::{rng, Error, Result};

const MAX_REFOLDS: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_star: f64,
    pub grid: Vec<f64>,
    /// Mean held-out loss per grid value; `+inf` where some fold's path
    /// stopped early (saturated logistic fit).
    pub cv_curve: Vec<f64>,
}

/// K-fold cross-validation over the penalty grid of a [`SelectorSpec`].
///
/// Folds are contiguous blocks of a seeded permutation. The loss is mean
/// squared error (linear) or mean binomial deviance (logistic); ties go to
/// the larger penalty.
pub fn cross_validate(data: &Dataset, spec: &SelectorSpec, seed: u64) -> Result<CvResult> {
    spec.validate()?;
    let n = data.n();
    let k = spec.cv_folds;
    if n < k {
        return Err(Error::InvalidInput(format!("{n} observations cannot form {k} folds")));
    }
    let grid = spec.grid_for(data);
    if grid.len() == 1 {
        return Ok(CvResult { lambda_star: grid[0], cv_curve: vec![f64::NAN], grid });
    }

    let folds = make_folds(data, k, seed)?;
    let mut total = vec![0.0; grid.len()];
    let mut complete = vec![true; grid.len()];
    for test in &folds {
        let mut in_test = vec![false; n];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let losses = fold_losses(&data.subset(&train), &data.subset(test), spec, &grid);
        for (g, l) in losses.into_iter().enumerate() {
            match l {
                Some(l) => total[g] += l,
                None => complete[g] = false,
            }
        }
    }
    let cv_curve: Vec<f64> = total
        .iter()
        .zip(&complete)
        .map(|(&t, &c)| if c { t / n as f64 } else { f64::INFINITY })
        .collect();
    let mut best = 0;
    for g in 1..grid.len() {
        if cv_curve[g] < cv_curve[best] {
            best = g;
        }
    }
    Ok(CvResult { lambda_star: grid[best], grid, cv_curve })
}

fn make_folds(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = data.n();
    let y = data.y();
    for attempt in 0..MAX_REFOLDS {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::child(seed, attempt as u64));
        let folds: Vec<Vec<usize>> = (0..k)
            .map(|f| {
                let (lo, hi) = (f * n / k, (f + 1) * n / k);
                let mut v = perm[lo..hi].to_vec();
                v.sort_unstable();
                v
            })
            .collect();
        if data.task() == Task::Linear {
            return Ok(folds);
        }
        let total_ones = y.iter().filter(|&&v| v == 1.0).count();
        let ok = folds.iter().all(|f| {
            let ones = f.iter().filter(|&&i| y[i] == 1.0).count();
            // Training part must keep both classes.
            let train_ones = total_ones - ones;
            let train_n = n - f.len();
            train_ones > 0 && train_ones < train_n
        });
        if ok {
            return Ok(folds);
        }
    }
    Err(Error::FoldDegeneracy(MAX_REFOLDS))
}

/// Summed held-out loss at each grid value, following the path with warm
/// starts. `None` once a logistic path saturates (training deviance below
/// 0.1% of the null deviance).
fn fold_losses(train: &Dataset, test: &Dataset, spec: &SelectorSpec, grid: &[f64]) -> Vec<Option<f64>> {
    let d = Design::new(train);
    let pen = spec.penalty();
    let task = train.task();
    let mut b = vec![0.0; d.p];
    let mut b0 = match task {
        Task::Linear => 0.0,
        Task::Logistic => {
            let m = d.y_mean.clamp(1e-6, 1.0 - 1e-6);
            (m / (1.0 - m)).ln()
        }
    };
    let null_dev = match task {
        Task::Logistic => super::solver::logistic_loss(&d, &vec![b0; d.n]),
        Task::Linear => 0.0,
    };
    let mut out = Vec::with_capacity(grid.len());
    let mut saturated = false;
    for &lambda in grid {
        if saturated {
            out.push(None);
            continue;
        }
        match task {
            Task::Linear => {
                solve_gaussian(&d, lambda, pen, &mut b, spec.tol, spec.max_iter);
            }
            Task::Logistic => {
                solve_logistic(&d, lambda, pen, &mut b0, &mut b, spec.tol, spec.max_iter);
                let dev = super::solver::logistic_loss(&d, &linear_predictor(&d, b0, &b));
                if dev < 1e-3 * null_dev {
                    saturated = true;
                }
            }
        }
        let (beta, intercept) = d.to_original(task, b0, &b);
        let xb = test.x().dot(&ndarray::Array1::from(beta)) + intercept;
        let loss = match task {
            Task::Linear => test.y().iter().zip(xb.iter()).map(|(y, f)| (y - f) * (y - f)).sum(),
            Task::Logistic => test
                .y()
                .iter()
                .zip(xb.iter())
                .map(|(&y, &eta)| {
                    let p = (1.0 / (1.0 + (-eta).exp())).clamp(1e-12, 1.0 - 1e-12);
                    -2.0 * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum(),
        };
        out.push(Some(loss));
    }
    out
}
