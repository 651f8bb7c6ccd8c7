//! Parametric count families for GDF values: mass functions, maximum
//! likelihood fits and mixture order selection.
//!
//! Bounded families (CMB, beta-binomial, binomial mixture) live on
//! `0..=trials`. The unbounded ones (CMP, generalized Poisson, Poisson
//! mixture) are evaluated up to the smallest `M` whose tail mass is below
//! `1e-12`.

mod mixture;
mod mle;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub use mixture::{fit_mixture_em, fit_mixture_em_traced, select_order, MixtureKind, OrderSelection};
pub use mle::{fit_mle, FamilyKind};

use crate::{Error, Result};

pub const TAIL_MASS: f64 = 1e-12;
const MAX_SUPPORT: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum CountFamily {
    /// Conway-Maxwell-binomial: mass ∝ C(trials, k)^nu q^k (1-q)^(trials-k).
    #[serde(rename = "CMB")]
    Cmb { trials: u32, q: f64, nu: f64 },
    /// Conway-Maxwell-Poisson: mass ∝ lambda^k / (k!)^nu.
    #[serde(rename = "CMP")]
    Cmp { lambda: f64, nu: f64 },
    #[serde(rename = "BB")]
    BetaBinomial { trials: u32, alpha: f64, beta: f64 },
    /// Generalized Poisson: theta (theta + k lambda)^(k-1) e^(-theta - k lambda) / k!,
    /// restricted to `0 <= lambda < 1`.
    #[serde(rename = "GP")]
    GenPoisson { theta: f64, lambda: f64 },
    #[serde(rename = "BinomMix")]
    BinomMix { trials: u32, weights: Vec<f64>, q: Vec<f64> },
    #[serde(rename = "PoisMix")]
    PoisMix { weights: Vec<f64>, lambda: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountModelFit {
    #[serde(flatten)]
    pub family: CountFamily,
    pub loglik: f64,
    pub n_used: usize,
    pub converged: bool,
}

pub(crate) fn ln_choose(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub(crate) fn ln_factorial(k: u32) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// `k ln q + (n-k) ln(1-q)` with the `0 ln 0 = 0` convention.
fn bernoulli_terms(n: u32, k: u32, q: f64) -> f64 {
    let a = if k == 0 { 0.0 } else { k as f64 * q.ln() };
    let b = if k == n { 0.0 } else { (n - k) as f64 * (1.0 - q).ln() };
    a + b
}

pub(crate) fn ln_binomial(n: u32, k: u32, q: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, k) + bernoulli_terms(n, k, q)
}

pub(crate) fn ln_poisson(k: u32, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn mixture_ln(weights: &[f64], comps: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = weights.iter().enumerate().map(|(c, w)| w.ln() + comps(c)).collect();
    log_sum_exp(&terms)
}

impl CountFamily {
    pub fn name(&self) -> &'static str {
        match self {
            CountFamily::Cmb { .. } => "CMB",
            CountFamily::Cmp { .. } => "CMP",
            CountFamily::BetaBinomial { .. } => "BB",
            CountFamily::GenPoisson { .. } => "GP",
            CountFamily::BinomMix { .. } => "BinomMix",
            CountFamily::PoisMix { .. } => "PoisMix",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{}: {what}", self.name())));
        match self {
            CountFamily::Cmb { q, nu, .. } => {
                if !open01(*q) || !(*nu > 0.0) || !nu.is_finite() {
                    return bad("need 0 < q < 1 and nu > 0");
                }
            }
            CountFamily::Cmp { lambda, nu } => {
                if !(*lambda > 0.0) || !(*nu > 0.0) || !lambda.is_finite() || !nu.is_finite() {
                    return bad("need lambda > 0 and nu > 0");
                }
            }
            CountFamily::BetaBinomial { alpha, beta, .. } => {
                if !(*alpha > 0.0) || !(*beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
                    return bad("need alpha > 0 and beta > 0");
                }
            }
            CountFamily::GenPoisson { theta, lambda } => {
                if !(*theta > 0.0) || !theta.is_finite() || !(*lambda >= 0.0 && *lambda < 1.0) {
                    return bad("need theta > 0 and 0 <= lambda < 1");
                }
            }
            CountFamily::BinomMix { trials, weights, q } => {
                if weights.is_empty() || weights.len() != q.len() {
                    return bad("need K >= 1 matching weights and rates");
                }
                if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("weights must be positive and sum to 1");
                }
                // Mixture components may sit on the closed boundary after EM.
                if q.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return bad("component rates must lie in [0, 1]");
                }
                let _ = trials;
            }
            CountFamily::PoisMix { weights, lambda } => {
                if weights.is_empty() || weights.len() != lambda.len() {
                    return bad("need K >= 1 matching weights and rates");
                }
                if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("weights must be positive and sum to 1");
                }
                if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                    return bad("component means must be non-negative");
                }
            }
        }
        Ok(())
    }

    /// Upper end of the support: `trials` for bounded families, otherwise
    /// the truncation point.
    pub fn support_max(&self) -> u32 {
        match self {
            CountFamily::Cmb { trials, .. }
            | CountFamily::BetaBinomial { trials, .. }
            | CountFamily::BinomMix { trials, .. } => *trials,
            _ => (self.ln_pmf_table().len() - 1) as u32,
        }
    }

    /// Log mass on `0..=support_max()`, computed in one pass.
    pub fn ln_pmf_table(&self) -> Vec<f64> {
        match self {
            CountFamily::Cmb { trials, q, nu } => {
                let raw: Vec<f64> =
                    (0..=*trials).map(|k| nu * ln_choose(*trials, k) + bernoulli_terms(*trials, k, *q)).collect();
                let z = log_sum_exp(&raw);
                raw.into_iter().map(|v| v - z).collect()
            }
            CountFamily::BetaBinomial { trials, alpha, beta } => {
                let lb = |a: f64, b: f64| ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                let base = lb(*alpha, *beta);
                (0..=*trials)
                    .map(|k| {
                        ln_choose(*trials, k) + lb(k as f64 + alpha, (*trials - k) as f64 + beta) - base
                    })
                    .collect()
            }
            CountFamily::BinomMix { trials, weights, q } => (0..=*trials)
                .map(|k| mixture_ln(weights, |c| ln_binomial(*trials, k, q[c])))
                .collect(),
            CountFamily::Cmp { lambda, nu } => {
                let raw = cmp_unnormalized(*lambda, *nu);
                let z = log_sum_exp(&raw);
                let mut out: Vec<f64> = raw.into_iter().map(|v| v - z).collect();
                truncate_tail(&mut out);
                out
            }
            CountFamily::GenPoisson { .. } | CountFamily::PoisMix { .. } => {
                let mut out = Vec::new();
                let mut cum = 0.0;
                let mut k = 0u32;
                loop {
                    let l = self.ln_pmf_direct(k);
                    out.push(l);
                    cum += l.exp();
                    let past_mode = k as f64 > self.mean_hint();
                    if (past_mode && 1.0 - cum < TAIL_MASS) || out.len() >= MAX_SUPPORT {
                        break;
                    }
                    k += 1;
                }
                out
            }
        }
    }

    fn mean_hint(&self) -> f64 {
        match self {
            CountFamily::GenPoisson { theta, lambda } => theta / (1.0 - lambda),
            CountFamily::PoisMix { lambda, .. } => lambda.iter().copied().fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    /// Closed-form log mass where one exists without a normalizer.
    fn ln_pmf_direct(&self, k: u32) -> f64 {
        match self {
            CountFamily::GenPoisson { theta, lambda } => {
                let t = theta + k as f64 * lambda;
                theta.ln() + (k as f64 - 1.0) * t.ln() - t - ln_factorial(k)
            }
            CountFamily::PoisMix { weights, lambda } => mixture_ln(weights, |c| ln_poisson(k, lambda[c])),
            _ => unreachable!("no direct form"),
        }
    }

    /// Log mass at `k`. Beyond the truncation point of an unbounded family
    /// the exact mass is still returned.
    pub fn ln_pmf(&self, k: u32) -> f64 {
        match self {
            CountFamily::GenPoisson { .. } | CountFamily::PoisMix { .. } => self.ln_pmf_direct(k),
            CountFamily::Cmp { lambda, nu } => {
                let raw = cmp_unnormalized(*lambda, *nu);
                let z = log_sum_exp(&raw);
                k as f64 * lambda.ln() - nu * ln_factorial(k) - z
            }
            _ => {
                let table = self.ln_pmf_table();
                table.get(k as usize).copied().unwrap_or(f64::NEG_INFINITY)
            }
        }
    }

    pub fn pmf(&self, k: u32) -> f64 {
        self.ln_pmf(k).exp()
    }

    pub fn pmf_table(&self) -> Vec<f64> {
        self.ln_pmf_table().into_iter().map(f64::exp).collect()
    }

    pub fn cdf_table(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pmf_table()
            .into_iter()
            .map(|p| {
                acc += p;
                acc.min(1.0)
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.pmf_table().iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// Log-likelihood of a count histogram (`counts[k]` = multiplicity of `k`).
    pub fn loglik_counts(&self, counts: &[usize]) -> f64 {
        let table = self.ln_pmf_table();
        let mut ll = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let l = match table.get(k) {
                Some(&l) => l,
                None => match self {
                    CountFamily::Cmb { .. } | CountFamily::BetaBinomial { .. } | CountFamily::BinomMix { .. } => {
                        f64::NEG_INFINITY
                    }
                    _ => self.ln_pmf(k as u32),
                },
            };
            ll += c as f64 * l;
        }
        ll
    }

    /// Number of free parameters (used by information criteria).
    pub fn n_params(&self) -> usize {
        match self {
            CountFamily::BinomMix { weights, .. } | CountFamily::PoisMix { weights, .. } => 2 * weights.len() - 1,
            _ => 2,
        }
    }
}

/// Unnormalized CMP log terms, summed until they are negligible past the
/// mode. Empty tail handling is left to the caller.
fn cmp_unnormalized(lambda: f64, nu: f64) -> Vec<f64> {
    let ll = lambda.ln();
    let mut out = Vec::new();
    let mut max = f64::NEG_INFINITY;
    let mut k = 0u32;
    loop {
        let t = k as f64 * ll - nu * ln_factorial(k);
        max = max.max(t);
        out.push(t);
        // Terms are log-concave in k: once decreasing and far below the
        // maximum, the rest of the series is negligible.
        if k > 0 && t < out[k as usize - 1] && t < max - 45.0 {
            break;
        }
        if out.len() >= MAX_SUPPORT {
            break;
        }
        k += 1;
    }
    out
}

fn truncate_tail(table: &mut Vec<f64>) {
    let mut tail = 0.0;
    let mut cut = table.len();
    while cut > 1 {
        let next = tail + table[cut - 1].exp();
        if next >= TAIL_MASS {
            break;
        }
        tail = next;
        cut -= 1;
    }
    table.truncate(cut);
}

/// Histogram of non-negative counts.
pub(crate) fn histogram(data: &[u32]) -> Vec<usize> {
    let max = data.iter().copied().max().unwrap_or(0) as usize;
    let mut h = vec![0usize; max + 1];
    for &v in data {
        h[v as usize] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, Discrete, Poisson};

    #[test]
    fn cmb_with_unit_nu_is_binomial() {
        let f = CountFamily::Cmb { trials: 5, q: 0.3, nu: 1.0 };
        let b = Binomial::new(0.3, 5).unwrap();
        for k in 0..=5u32 {
            assert!((f.pmf(k) - b.pmf(k as u64)).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn cmb_three_point_normalization() {
        // Unnormalized weights 1, 4, 1 (times 0.25).
        let f = CountFamily::Cmb { trials: 2, q: 0.5, nu: 2.0 };
        assert!((f.pmf(1) - 4.0 / 6.0).abs() < 1e-10);
        assert!((f.pmf(0) - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn cmp_with_unit_nu_is_poisson() {
        let f = CountFamily::Cmp { lambda: 2.0, nu: 1.0 };
        let p = Poisson::new(2.0).unwrap();
        for k in 0..=10u32 {
            assert!((f.pmf(k) - p.pmf(k as u64)).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn gp_with_zero_dispersion_is_poisson() {
        let f = CountFamily::GenPoisson { theta: 3.5, lambda: 0.0 };
        let p = Poisson::new(3.5).unwrap();
        for k in 0..=15u32 {
            assert!((f.pmf(k) - p.pmf(k as u64)).abs() < 1e-12);
        }
    }

    #[test]
    fn every_family_normalizes() {
        let fams = vec![
            CountFamily::Cmb { trials: 200, q: 0.05, nu: 0.7 },
            CountFamily::Cmb { trials: 200, q: 0.02, nu: 1.6 },
            CountFamily::Cmp { lambda: 7.0, nu: 0.6 },
            CountFamily::Cmp { lambda: 0.4, nu: 2.5 },
            CountFamily::BetaBinomial { trials: 200, alpha: 0.8, beta: 15.0 },
            CountFamily::GenPoisson { theta: 4.0, lambda: 0.6 },
            CountFamily::BinomMix { trials: 200, weights: vec![0.3, 0.7], q: vec![0.01, 0.2] },
            CountFamily::PoisMix { weights: vec![0.5, 0.25, 0.25], lambda: vec![0.5, 6.0, 30.0] },
        ];
        for f in fams {
            f.validate().unwrap();
            let total: f64 = f.pmf_table().iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "{}: {total}", f.name());
            let cdf = f.cdf_table();
            assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
            assert!((cdf.last().unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(CountFamily::Cmb { trials: 5, q: 1.0, nu: 1.0 }.validate().is_err());
        assert!(CountFamily::GenPoisson { theta: 1.0, lambda: 1.0 }.validate().is_err());
        assert!(CountFamily::BetaBinomial { trials: 5, alpha: 0.0, beta: 1.0 }.validate().is_err());
        assert!(CountFamily::PoisMix { weights: vec![0.5, 0.4], lambda: vec![1.0, 2.0] }.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let fit = CountModelFit {
            family: CountFamily::Cmb { trials: 10, q: 0.2, nu: 1.1 },
            loglik: -12.5,
            n_used: 40,
            converged: true,
        };
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        assert_eq!(v["family"], "CMB");
        assert_eq!(v["params"]["trials"], 10);
        assert_eq!(v["loglik"], -12.5);
        let back: CountModelFit = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }
}
