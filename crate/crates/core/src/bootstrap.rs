//! Resampling thresholds: percentile bootstrap of the mean (Boot-I) and
//! m-out-of-n bootstraps of the quantile (Boot-II) and mid-quantile
//! (Boot-III).

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::thresholds::{check_level, empirical_mid_distribution, ThresholdKind, ThresholdRule};
use crate::{rng, Error, Result};

pub const DEFAULT_REPLICATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of replicates.
    pub b: usize,
    /// Subsample size for Boot-II/III; `None` means `ceil(n^(2/3))`.
    pub m: Option<usize>,
    /// `alpha` for Boot-I, `zeta` for Boot-II/III.
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(level: f64, seed: u64) -> Self {
        BootstrapConfig { b: DEFAULT_REPLICATES, m: None, level, seed }
    }

    fn check(&self) -> Result<()> {
        if self.b < 100 {
            return Err(Error::InvalidParameter(format!("need at least 100 replicates, got {}", self.b)));
        }
        check_level("bootstrap level", self.level)
    }

    fn subsample(&self, n: usize) -> Result<usize> {
        let m = self.m.unwrap_or_else(|| default_m(n));
        if m == 0 || m >= n {
            return Err(Error::InvalidParameter(format!("subsample size m={m} must satisfy 1 <= m < n={n}")));
        }
        Ok(m)
    }
}

/// `ceil(n^(2/3))`.
pub fn default_m(n: usize) -> usize {
    let m = (n as f64).powf(2.0 / 3.0);
    // Guard against m landing just above an integer through rounding.
    let r = m.round();
    if (m - r).abs() < 1e-9 {
        r as usize
    } else {
        m.ceil() as usize
    }
}

fn resample(values: &[u32], m: usize, seed: u64, rep: usize) -> Vec<u32> {
    let mut r = rng::child(seed, rep as u64);
    (0..m).map(|_| values[r.random_range(0..values.len())]).collect()
}

/// Smallest order statistic whose empirical cdf reaches `p`.
fn left_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Boot-I: upper `(1 - alpha)` percentile of `B` bootstrap means.
pub fn boot1_mean_upper(values: &[u32], cfg: &BootstrapConfig) -> Result<ThresholdRule> {
    cfg.check()?;
    let n = values.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("Boot-I needs at least 10 values, got {n}")));
    }
    let mut means: Vec<f64> = (0..cfg.b)
        .into_par_iter()
        .map(|rep| resample(values, n, cfg.seed, rep).iter().map(|&v| v as f64).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(ThresholdRule {
        kind: ThresholdKind::BootMeanUpper { alpha: cfg.level, b: cfg.b },
        cutoff: left_quantile(&means, 1.0 - cfg.level),
    })
}

/// Boot-II: median over replicates of the `zeta` sample quantile of `m`
/// draws.
pub fn boot2_quantile(values: &[u32], cfg: &BootstrapConfig) -> Result<ThresholdRule> {
    cfg.check()?;
    let m = cfg.subsample(values.len())?;
    let reps: Vec<f64> = (0..cfg.b)
        .into_par_iter()
        .map(|rep| {
            let mut draw: Vec<f64> = resample(values, m, cfg.seed, rep).into_iter().map(f64::from).collect();
            draw.sort_by(f64::total_cmp);
            left_quantile(&draw, cfg.level)
        })
        .collect();
    Ok(ThresholdRule { kind: ThresholdKind::BootQuantile { zeta: cfg.level, m, b: cfg.b }, cutoff: median(reps) })
}

/// Boot-III: median over replicates of the empirical `zeta` mid-quantile
/// of `m` draws.
pub fn boot3_midquantile(values: &[u32], cfg: &BootstrapConfig) -> Result<ThresholdRule> {
    cfg.check()?;
    let m = cfg.subsample(values.len())?;
    let reps: Vec<f64> = (0..cfg.b)
        .into_par_iter()
        .map(|rep| {
            let draw = resample(values, m, cfg.seed, rep);
            empirical_mid_distribution(&draw).map(|md| md.mid_quantile(cfg.level))
        })
        .collect::<Result<_>>()?;
    Ok(ThresholdRule { kind: ThresholdKind::BootMidQuantile { zeta: cfg.level, m, b: cfg.b }, cutoff: median(reps) })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cutoffs_stay_within_sample_range(values in prop::collection::vec(0u32..30, 10..80), seed in any::<u64>()) {
            let min = *values.iter().min().unwrap() as f64;
            let max = *values.iter().max().unwrap() as f64;
            let cfg = BootstrapConfig { b: 100, ..BootstrapConfig::new(0.05, seed) };
            let c1 = boot1_mean_upper(&values, &cfg).unwrap().cutoff;
            prop_assert!(min <= c1 && c1 <= max);
            let cfg = BootstrapConfig { b: 100, ..BootstrapConfig::new(0.95, seed) };
            for c in [boot2_quantile(&values, &cfg).unwrap().cutoff, boot3_midquantile(&values, &cfg).unwrap().cutoff] {
                prop_assert!(min <= c && c <= max);
            }
        }

        #[test]
        fn same_seed_same_cutoff(values in prop::collection::vec(0u32..30, 10..40), seed in any::<u64>()) {
            let cfg = BootstrapConfig { b: 100, ..BootstrapConfig::new(0.95, seed) };
            prop_assert_eq!(boot3_midquantile(&values, &cfg).unwrap(), boot3_midquantile(&values, &cfg).unwrap());
        }
    }
}
