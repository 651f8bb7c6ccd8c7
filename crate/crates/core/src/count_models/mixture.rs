//! Finite binomial and Poisson mixtures: EM fitting and order selection.

use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{histogram, ln_choose, ln_factorial, log_sum_exp, CountFamily, CountModelFit};
use crate::{rng, Error, Result};

const RESTARTS: u64 = 10;
const MAX_EM_ITER: usize = 5000;
const EM_TOL: f64 = 1e-10;
const EMPTY_WEIGHT: f64 = 1e-8;
const LRT_REPLICATES: u64 = 199;
const LRT_LEVEL: f64 = 0.05;
/// Restarts and relative tolerance for the fits inside each bootstrap
/// replicate of the likelihood-ratio test.
const LRT_RESTARTS: u64 = 3;
const LRT_EM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixtureKind {
    BinomMix,
    PoisMix,
}

/// Outcome of [`select_order`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderSelection {
    pub k: usize,
    pub fit: CountModelFit,
    /// BIC per order (binomial mixtures) or bootstrap p-value of each
    /// `K` vs `K+1` test performed (Poisson mixtures).
    pub scores: Vec<f64>,
}

struct Run {
    weights: Vec<f64>,
    rates: Vec<f64>,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
    empty: bool,
}

fn check_input(data: &[u32], k: usize, kind: MixtureKind, trials: u32) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("mixture order must be at least 1".into()));
    }
    if kind == MixtureKind::BinomMix {
        if (trials as usize) + 1 < 2 * k {
            return Err(Error::IdentifiabilityViolation { k, trials: trials as usize });
        }
        if let Some(&v) = data.iter().find(|&&v| v > trials) {
            return Err(Error::InvalidInput(format!("value {v} exceeds {trials} trials")));
        }
    }
    Ok(())
}

/// Component log mass from a precomputed `ln C(trials, v)` or `-ln v!`,
/// using `0 ln 0 = 0`.
#[inline]
fn component_ln(kind: MixtureKind, trials: u32, v: u32, constant: f64, ln_rate: f64, ln_rest: f64, rate: f64) -> f64 {
    let a = if v == 0 { 0.0 } else { v as f64 * ln_rate };
    match kind {
        MixtureKind::BinomMix => {
            let b = if v == trials { 0.0 } else { (trials - v) as f64 * ln_rest };
            constant + a + b
        }
        MixtureKind::PoisMix => constant + a - rate,
    }
}

/// Component means initialized at quantiles of the data: the middle of each
/// of `K` equal-probability slices for restart 0, a uniform point in each
/// slice for later restarts.
fn initial_rates(sorted: &[u32], k: usize, kind: MixtureKind, trials: u32, seed: u64, restart: u64) -> Vec<f64> {
    let mut r = rng::child(seed, restart);
    let n = sorted.len();
    (0..k)
        .map(|c| {
            let u = if restart == 0 { 0.5 } else { r.random::<f64>() };
            let pos = (((c as f64 + u) / k as f64) * n as f64).floor() as usize;
            let centre = sorted[pos.min(n - 1)] as f64;
            // Separate tied centres a little so components can split.
            let spread = 1.0 + 0.05 * (c as f64 - (k as f64 - 1.0) / 2.0);
            match kind {
                MixtureKind::BinomMix => (centre * spread / trials as f64).clamp(1e-3, 1.0 - 1e-3),
                MixtureKind::PoisMix => (centre * spread).max(0.05 * (c + 1) as f64),
            }
        })
        .collect()
}

fn em_run(hist: &[usize], k: usize, kind: MixtureKind, trials: u32, rates0: Vec<f64>, tol: f64) -> Run {
    let support: Vec<(u32, f64)> =
        hist.iter().enumerate().filter(|(_, &c)| c > 0).map(|(v, &c)| (v as u32, c as f64)).collect();
    let total: f64 = support.iter().map(|(_, c)| c).sum();
    let mut weights = vec![1.0 / k as f64; k];
    let mut rates = rates0;
    let mut trace = Vec::new();
    let mut resp = vec![0.0; support.len() * k];
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut empty = false;
    let constants: Vec<f64> = support
        .iter()
        .map(|&(v, _)| match kind {
            MixtureKind::BinomMix => ln_choose(trials, v),
            MixtureKind::PoisMix => -ln_factorial(v),
        })
        .collect();
    let mut ln_w = vec![0.0; k];
    let mut ln_rate = vec![0.0; k];
    let mut ln_rest = vec![0.0; k];
    for _ in 0..MAX_EM_ITER {
        for j in 0..k {
            ln_w[j] = weights[j].ln();
            ln_rate[j] = rates[j].ln();
            ln_rest[j] = (1.0 - rates[j]).ln();
        }
        // E-step, which also yields the log-likelihood at the current point.
        let mut ll = 0.0;
        let mut terms = vec![0.0; k];
        for (s, &(v, c)) in support.iter().enumerate() {
            for j in 0..k {
                terms[j] = ln_w[j]
                    + component_ln(kind, trials, v, constants[s], ln_rate[j], ln_rest[j], rates[j]);
            }
            let z = log_sum_exp(&terms);
            ll += c * z;
            for j in 0..k {
                resp[s * k + j] = (terms[j] - z).exp();
            }
        }
        trace.push(ll);
        if ll - prev < tol * (1.0 + ll.abs()) && prev.is_finite() {
            converged = true;
            break;
        }
        prev = ll;
        // M-step.
        for j in 0..k {
            let mut nk = 0.0;
            let mut sx = 0.0;
            for (s, &(v, c)) in support.iter().enumerate() {
                let w = c * resp[s * k + j];
                nk += w;
                sx += w * v as f64;
            }
            weights[j] = nk / total;
            if nk > 0.0 {
                let m = sx / nk;
                rates[j] = match kind {
                    MixtureKind::BinomMix => (m / trials as f64).clamp(0.0, 1.0),
                    MixtureKind::PoisMix => m,
                };
            }
        }
        if weights.iter().any(|&w| w < EMPTY_WEIGHT) {
            empty = true;
            break;
        }
    }
    let loglik = *trace.last().unwrap_or(&f64::NEG_INFINITY);
    Run { weights, rates, loglik, trace, converged: converged && !empty, empty }
}

fn to_fit(run: &Run, kind: MixtureKind, trials: u32, n: usize) -> CountModelFit {
    // Keep weights strictly positive so the family stays valid.
    let mut weights: Vec<f64> = run.weights.iter().map(|&w| w.max(1e-300)).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    let family = match kind {
        MixtureKind::BinomMix => CountFamily::BinomMix { trials, weights, q: run.rates.clone() },
        MixtureKind::PoisMix => CountFamily::PoisMix { weights, lambda: run.rates.clone() },
    };
    CountModelFit { family, loglik: run.loglik, n_used: n, converged: run.converged }
}

/// EM fit of a `k`-component mixture from ten seeded restarts; returns the
/// restart with the highest log-likelihood (lowest index on ties).
///
/// Restarts in which a component weight falls below 1e-8 are abandoned;
/// when every restart ends that way the best of them is returned with
/// `converged = false`.
pub fn fit_mixture_em(data: &[u32], k: usize, kind: MixtureKind, trials: u32, seed: u64) -> Result<CountModelFit> {
    fit_mixture_em_traced(data, k, kind, trials, seed).map(|(fit, _)| fit)
}

/// As [`fit_mixture_em`], also returning the per-iteration log-likelihood
/// of the winning restart.
pub fn fit_mixture_em_traced(
    data: &[u32],
    k: usize,
    kind: MixtureKind,
    trials: u32,
    seed: u64,
) -> Result<(CountModelFit, Vec<f64>)> {
    fit_em(data, k, kind, trials, seed, RESTARTS, EM_TOL)
}

fn fit_em(
    data: &[u32],
    k: usize,
    kind: MixtureKind,
    trials: u32,
    seed: u64,
    restarts: u64,
    tol: f64,
) -> Result<(CountModelFit, Vec<f64>)> {
    check_input(data, k, kind, trials)?;
    let hist = histogram(data);
    let mut sorted = data.to_vec();
    sorted.sort_unstable();
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| em_run(&hist, k, kind, trials, initial_rates(&sorted, k, kind, trials, seed, r), tol))
        .collect();
    let pick = |allow_empty: bool| {
        let mut best: Option<&Run> = None;
        for run in runs.iter().filter(|r| allow_empty || !r.empty) {
            if best.is_none_or(|b| run.loglik > b.loglik) {
                best = Some(run);
            }
        }
        best
    };
    let best = pick(false).or_else(|| pick(true)).expect("at least one restart");
    Ok((to_fit(best, kind, trials, data.len()), best.trace.clone()))
}

fn sample_from(fit: &CountModelFit, n: usize, seed: u64) -> Vec<u32> {
    let mut r = rng::rng(seed);
    let (weights, rates, trials) = match &fit.family {
        CountFamily::BinomMix { trials, weights, q } => (weights, q, Some(*trials)),
        CountFamily::PoisMix { weights, lambda } => (weights, lambda, None),
        _ => unreachable!("mixture family"),
    };
    (0..n)
        .map(|_| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut c = weights.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    c = j;
                    break;
                }
            }
            match trials {
                Some(t) => Binomial::new(t as u64, rates[c]).unwrap().sample(&mut r) as u32,
                None if rates[c] > 0.0 => Poisson::new(rates[c]).unwrap().sample(&mut r) as u32,
                None => 0,
            }
        })
        .collect()
}

/// Mixture order selection.
///
/// Binomial mixtures: BIC (`-2 loglik + (2K-1) ln n`) minimized over
/// `K <= min(k_max, (trials+1)/2)`. Poisson mixtures: sequential tests of
/// `K` against `K+1` components at level 0.05, each calibrated by a
/// 199-replicate parametric bootstrap of the likelihood-ratio statistic
/// under the fitted `K`-component model, stopping at the first
/// non-rejection.
pub fn select_order(data: &[u32], kind: MixtureKind, trials: u32, k_max: usize, seed: u64) -> Result<OrderSelection> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be at least 1".into()));
    }
    let n = data.len();
    match kind {
        MixtureKind::BinomMix => {
            let k_top = k_max.min((trials as usize).div_ceil(2)).max(1);
            let mut scores = Vec::with_capacity(k_top);
            let mut best: Option<(usize, CountModelFit, f64)> = None;
            for k in 1..=k_top {
                let fit = fit_mixture_em(data, k, kind, trials, rng::derive(seed, k as u64))?;
                let bic = -2.0 * fit.loglik + fit.family.n_params() as f64 * (n as f64).ln();
                scores.push(bic);
                if best.as_ref().is_none_or(|b| bic < b.2) {
                    best = Some((k, fit, bic));
                }
            }
            let (k, fit, _) = best.expect("k_top >= 1");
            Ok(OrderSelection { k, fit, scores })
        }
        MixtureKind::PoisMix => {
            let mut k = 1;
            let mut current = fit_mixture_em(data, 1, kind, trials, rng::derive(seed, 1))?;
            let mut scores = Vec::new();
            while k < k_max {
                let next = fit_mixture_em(data, k + 1, kind, trials, rng::derive(seed, k as u64 + 1))?;
                let lrt = (2.0 * (next.loglik - current.loglik)).max(0.0);
                let test_seed = rng::derive_labeled(seed, "lrt", k as u64);
                let exceed: Vec<bool> = (0..LRT_REPLICATES)
                    .into_par_iter()
                    .map(|b| -> Result<bool> {
                        let s = rng::derive(test_seed, b);
                        let sample = sample_from(&current, n, s);
                        let fit = |k, stream| {
                            fit_em(&sample, k, kind, trials, rng::derive(s, stream), LRT_RESTARTS, LRT_EM_TOL)
                                .map(|(f, _)| f)
                        };
                        let (f0, f1) = (fit(k, 1)?, fit(k + 1, 2)?);
                        Ok((2.0 * (f1.loglik - f0.loglik)).max(0.0) >= lrt)
                    })
                    .collect::<Result<_>>()?;
                let count = exceed.iter().filter(|&&e| e).count();
                let p_value = (1 + count) as f64 / (LRT_REPLICATES + 1) as f64;
                scores.push(p_value);
                if p_value < LRT_LEVEL {
                    k += 1;
                    current = next;
                } else {
                    break;
                }
            }
            Ok(OrderSelection { k, fit: current, scores })
        }
    }
}
