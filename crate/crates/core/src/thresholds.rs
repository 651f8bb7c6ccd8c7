//! Mid-distributions, mid-quantiles and the non-resampling threshold rules.

use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::count_models::{CountFamily, CountModelFit};
use crate::{Error, Result};

/// Probability below which a parametric support point is dropped.
const NEGLIGIBLE_MASS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MidSource {
    Empirical,
    Parametric(CountFamily),
}

/// A discrete law on ascending support points with its cdf `F` and mid-cdf
/// `F_mid(x) = F(x) - pmf(x)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidDistribution {
    pub support: Vec<u32>,
    pub cdf: Vec<f64>,
    pub mid: Vec<f64>,
    pub source: MidSource,
}

impl MidDistribution {
    fn from_masses(points: Vec<(u32, f64)>, source: MidSource) -> Self {
        let mut support = Vec::with_capacity(points.len());
        let mut cdf = Vec::with_capacity(points.len());
        let mut mid = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (k, p) in points {
            acc += p;
            support.push(k);
            cdf.push(acc.min(1.0));
            mid.push(acc - 0.5 * p);
        }
        MidDistribution { support, cdf, mid, source }
    }

    /// Mid-quantile at level `zeta`.
    ///
    /// Below the first mid-cdf value the support minimum is returned, above
    /// the last one the support maximum; a level equal to some `F_mid(k)`
    /// returns `k`, and any other level is linearly interpolated between
    /// the two neighbouring support points, `λ k + (1 - λ) k'` with
    /// `ζ = λ F_mid(k) + (1 - λ) F_mid(k')`.
    pub fn mid_quantile(&self, zeta: f64) -> f64 {
        let s = &self.support;
        let fm = &self.mid;
        let last = s.len() - 1;
        if zeta <= fm[0] {
            return s[0] as f64;
        }
        if zeta >= fm[last] {
            return s[last] as f64;
        }
        // First index with F_mid >= zeta; fm[j-1] < zeta <= fm[j].
        let j = fm.partition_point(|&v| v < zeta);
        if fm[j] == zeta {
            return s[j] as f64;
        }
        let lambda = (fm[j] - zeta) / (fm[j] - fm[j - 1]);
        lambda * s[j - 1] as f64 + (1.0 - lambda) * s[j] as f64
    }
}

/// Free-function form of [`MidDistribution::mid_quantile`].
pub fn mid_quantile(md: &MidDistribution, zeta: f64) -> f64 {
    md.mid_quantile(zeta)
}

/// Empirical mid-distribution of the observed values.
pub fn empirical_mid_distribution(values: &[u32]) -> Result<MidDistribution> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut points: Vec<(u32, f64)> = Vec::new();
    for v in sorted {
        match points.last_mut() {
            Some((k, c)) if *k == v => *c += 1.0,
            _ => points.push((v, 1.0)),
        }
    }
    points.iter_mut().for_each(|(_, c)| *c /= n);
    Ok(MidDistribution::from_masses(points, MidSource::Empirical))
}

/// Mid-distribution of a fitted family over its (truncated) support.
pub fn parametric_mid_distribution(family: &CountFamily) -> Result<MidDistribution> {
    family.validate()?;
    let points: Vec<(u32, f64)> = family
        .pmf_table()
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p >= NEGLIGIBLE_MASS)
        .map(|(k, p)| (k as u32, p))
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidParameter(format!("{} has no usable mass", family.name())));
    }
    Ok(MidDistribution::from_masses(points, MidSource::Parametric(family.clone())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum ThresholdKind {
    #[serde(rename = "CLT")]
    Clt { alpha: f64 },
    EmpiricalMid { zeta: f64 },
    ParametricMid { family: CountFamily, zeta: f64 },
    BootMeanUpper { alpha: f64, b: usize },
    BootQuantile { zeta: f64, m: usize, b: usize },
    BootMidQuantile { zeta: f64, m: usize, b: usize },
    /// Upper `1 - alpha` quantile of a chi-square law with `df` degrees of
    /// freedom.
    ChiSquare { alpha: f64, df: u32 },
    /// `|standardized value| >= k`.
    Standardized { k: f64 },
    /// Every value the rule was fitted to is zero; the cutoff is 0.
    PointMassAtZero,
}

/// A threshold rule together with its cutoff. Observations are flagged
/// when their value is strictly greater than the cutoff; an infinite cutoff
/// (serialized as `null`) flags nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub kind: ThresholdKind,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_infinity")]
    pub cutoff: f64,
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl ThresholdRule {
    pub fn flags(&self, value: f64) -> bool {
        value > self.cutoff
    }
}

pub(crate) fn check_level(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// `mean + z_(1-alpha) sd` with the sample standard deviation.
///
/// When every value is equal (or only one is given) the cutoff is `+inf`
/// and nothing is flagged.
pub fn clt_threshold(values: &[u32], alpha: f64) -> Result<ThresholdRule> {
    check_level("alpha", alpha)?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let kind = ThresholdKind::Clt { alpha };
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if var <= 0.0 {
        log::warn!("CLT threshold: zero variance, nothing will be flagged");
        return Ok(ThresholdRule { kind, cutoff: f64::INFINITY });
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha);
    Ok(ThresholdRule { kind, cutoff: mean + z * var.sqrt() })
}

/// Empirical mid-quantile of the values at `zeta`.
pub fn empirical_threshold(values: &[u32], zeta: f64) -> Result<ThresholdRule> {
    check_level("zeta", zeta)?;
    let md = empirical_mid_distribution(values)?;
    Ok(ThresholdRule { kind: ThresholdKind::EmpiricalMid { zeta }, cutoff: md.mid_quantile(zeta) })
}

/// Mid-quantile at `zeta` of a fitted family.
pub fn parametric_threshold(fit: &CountModelFit, zeta: f64) -> Result<ThresholdRule> {
    check_level("zeta", zeta)?;
    if !fit.converged {
        log::warn!("{} fit did not converge; using its last iterate", fit.family.name());
    }
    let md = parametric_mid_distribution(&fit.family)?;
    Ok(ThresholdRule {
        kind: ThresholdKind::ParametricMid { family: fit.family.clone(), zeta },
        cutoff: md.mid_quantile(zeta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, Discrete};

    #[test]
    fn point_mass() {
        let md = empirical_mid_distribution(&[7, 7, 7]).unwrap();
        assert_eq!(md.mid, vec![0.5]);
        assert_eq!(md.mid_quantile(0.5), 7.0);
        assert_eq!(md.mid_quantile(0.9), 7.0);
        assert_eq!(md.mid_quantile(0.1), 7.0);
    }

    #[test]
    fn two_point_symmetry() {
        let md = empirical_mid_distribution(&[0, 0, 1, 1]).unwrap();
        assert_eq!(md.mid, vec![0.25, 0.75]);
        assert_eq!(md.mid_quantile(0.5), 0.5);
        assert_eq!(md.mid_quantile(0.25), 0.0);
        assert_eq!(md.mid_quantile(0.75), 1.0);
    }

    #[test]
    fn all_four_branches() {
        let md = empirical_mid_distribution(&[0, 1, 2, 3, 4]).unwrap();
        for k in 0..5 {
            assert!((md.mid[k] - (k as f64 + 0.5) / 5.0).abs() < 1e-15);
        }
        // Below the first atom and above the last.
        assert_eq!(md.mid_quantile(0.05), 0.0);
        assert_eq!(md.mid_quantile(0.95), 4.0);
        // Exactly on an atom.
        assert_eq!(md.mid_quantile(md.mid[2]), 2.0);
        // Between atoms 1 (0.3) and 2 (0.5): zeta = 0.35 gives lambda = 0.75.
        assert!((md.mid_quantile(0.35) - (0.75 * 1.0 + 0.25 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn gaps_in_support_interpolate_between_observed_points() {
        let md = empirical_mid_distribution(&[0, 0, 10, 10]).unwrap();
        assert_eq!(md.support, vec![0, 10]);
        assert!((md.mid_quantile(0.5) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(empirical_mid_distribution(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn clt_formula_and_degenerate_case() {
        // Mean 10, sample sd 2.
        let v = [8u32, 12, 8, 12, 10, 10, 10, 10, 8, 12];
        let n = v.len() as f64;
        let m = 10.0;
        let sd = (v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let rule = clt_threshold(&v, 0.05).unwrap();
        assert!((rule.cutoff - (m + 1.6448536269514722 * sd)).abs() < 1e-9);
        let flat = clt_threshold(&[3; 10], 0.05).unwrap();
        assert!(flat.cutoff.is_infinite());
        assert!(!flat.flags(1e9));
        let json = serde_json::to_value(&flat).unwrap();
        assert!(json["cutoff"].is_null());
        let back: ThresholdRule = serde_json::from_value(json).unwrap();
        assert!(back.cutoff.is_infinite());
    }

    fn binomial_mid_quantile_oracle(trials: u64, q: f64, zeta: f64) -> f64 {
        let b = Binomial::new(q, trials).unwrap();
        let pmf: Vec<f64> = (0..=trials).map(|k| b.pmf(k)).collect();
        let mut acc = 0.0;
        let mut mid = Vec::new();
        for &p in &pmf {
            acc += p;
            mid.push(acc - 0.5 * p);
        }
        for k in 0..trials as usize {
            if mid[k] <= zeta && zeta <= mid[k + 1] {
                let lam = (mid[k + 1] - zeta) / (mid[k + 1] - mid[k]);
                return lam * k as f64 + (1.0 - lam) * (k + 1) as f64;
            }
        }
        unreachable!()
    }

    #[test]
    fn parametric_matches_binomial_summation() {
        let fit = CountModelFit {
            family: CountFamily::Cmb { trials: 200, q: 0.05, nu: 1.0 },
            loglik: 0.0,
            n_used: 0,
            converged: true,
        };
        let rule = parametric_threshold(&fit, 0.95).unwrap();
        let oracle = binomial_mid_quantile_oracle(200, 0.05, 0.95);
        assert!((rule.cutoff - oracle).abs() < 1e-8, "{} vs {oracle}", rule.cutoff);
    }

    #[test]
    fn bounded_family_cutoff_within_trials() {
        let fit = CountModelFit {
            family: CountFamily::BetaBinomial { trials: 12, alpha: 0.5, beta: 0.5 },
            loglik: 0.0,
            n_used: 0,
            converged: true,
        };
        assert!(parametric_threshold(&fit, 0.999999).unwrap().cutoff <= 12.0);
    }

    #[test]
    fn near_point_mass_at_zero() {
        let fit = CountModelFit {
            family: CountFamily::Cmb { trials: 200, q: 1e-20, nu: 1.0 },
            loglik: 0.0,
            n_used: 0,
            converged: true,
        };
        let rule = parametric_threshold(&fit, 0.95).unwrap();
        assert_eq!(rule.cutoff, 0.0);
        assert!(rule.flags(1.0));
    }

    #[test]
    fn parametric_and_empirical_agree_on_large_samples() {
        use rand_distr::Distribution;
        let mut r = crate::rng::rng(3);
        let b = rand_distr::Binomial::new(200, 0.05).unwrap();
        let data: Vec<u32> = (0..2000).map(|_| b.sample(&mut r) as u32).collect();
        let emp = empirical_threshold(&data, 0.95).unwrap().cutoff;
        let par = binomial_mid_quantile_oracle(200, 0.05, 0.95);
        assert!((emp - par).abs() <= 1.0, "{emp} vs {par}");
    }
}
