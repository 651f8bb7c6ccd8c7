//! Baseline detectors: HIM, MIP (random group deletion) and DF(LASSO).


use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{Stopwatch, DetectionResult, Detector, Diagnostics, Timings};
use crate::datamodel::Task;
use crate::influence::{gdf_profile, GdfMode, GdfOptions};
use crate::selectors::SelectorSpec;
use crate::thresholds::{check_level, ThresholdKind, ThresholdRule};
use crate::{rng, Dataset, Error, IndexSet, Result};

fn chi2_1_quantile(p: f64) -> f64 {
    ChiSquared::new(1.0).expect("df = 1").inverse_cdf(p)
}

fn require_linear(data: &Dataset, what: &str) -> Result<()> {
    if data.task() != Task::Linear {
        return Err(Error::InvalidInput(format!("{what} is defined for the linear model only")));
    }
    Ok(())
}

/// Marginal correlations of every column with `y` over `rows`, skipping the
/// row at position `skip`. With a skipped row the means divide by the full
/// subset size `m` rather than `m - 1`, as in the published estimator.
fn marginal_correlations(x: &Array2<f64>, y: &Array1<f64>, rows: &[usize], skip: Option<usize>) -> Result<Vec<f64>> {
    let m = rows.len() as f64;
    let kept = || rows.iter().enumerate().filter(move |(k, _)| Some(*k) != skip).map(|(_, &r)| r);
    let mu_y = kept().map(|r| y[r]).sum::<f64>() / m;
    let syy: f64 = kept().map(|r| (y[r] - mu_y).powi(2)).sum();
    if !(syy > 0.0) {
        return Err(Error::DegenerateResponse("response is constant within a subset".into()));
    }
    (0..x.ncols())
        .map(|j| {
            let mu_x = kept().map(|r| x[[r, j]]).sum::<f64>() / m;
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for r in kept() {
                let dx = x[[r, j]] - mu_x;
                sxx += dx * dx;
                sxy += dx * (y[r] - mu_y);
            }
            if !(sxx > 1e-24 * (1.0 + mu_x * mu_x) * m) {
                return Err(Error::ZeroSdColumn(j));
            }
            Ok(sxy / (sxx * syy).sqrt())
        })
        .collect()
}

/// Full-sample correlations with the ordinary sample means.
fn full_correlations(x: &Array2<f64>, y: &Array1<f64>, rows: &[usize]) -> Result<Vec<f64>> {
    // Deleting nothing: the divisor for the means equals the row count.
    marginal_correlations(x, y, rows, None)
}

/// `m^2 D` for the row at position `target` of `rows`, where `m` is the
/// number of rows and `D` the mean squared change in marginal correlation
/// when that row is deleted.
fn him_at(x: &Array2<f64>, y: &Array1<f64>, rows: &[usize], full: &[f64], target: usize) -> Result<f64> {
    let deleted = marginal_correlations(x, y, rows, Some(target))?;
    let p = full.len() as f64;
    let d: f64 = full.iter().zip(&deleted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p;
    let m = rows.len() as f64;
    Ok(m * m * d)
}

/// `n^2 D_i` for every observation.
pub fn him_statistics(data: &Dataset) -> Result<Vec<f64>> {
    require_linear(data, "HIM")?;
    let rows: Vec<usize> = (0..data.n()).collect();
    let full = full_correlations(data.x(), data.y(), &rows)?;
    (0..data.n()).into_par_iter().map(|i| him_at(data.x(), data.y(), &rows, &full, i)).collect()
}

/// HIM: flag `i` when `n^2 D_i` exceeds the `1 - alpha` quantile of the
/// chi-square law with one degree of freedom.
pub fn detect_him(data: &Dataset, alpha: f64) -> Result<DetectionResult> {
    check_level("alpha", alpha)?;
    let t = Stopwatch::start();
    let stats = him_statistics(data)?;
    let rule = ThresholdRule { kind: ThresholdKind::ChiSquare { alpha, df: 1 }, cutoff: chi2_1_quantile(1.0 - alpha) };
    let flagged = IndexSet::new((0..stats.len()).filter(|&i| rule.flags(stats[i])).collect(), data.n())?;
    let mut timings = Timings::new();
    timings.insert("total".into(), t.seconds());
    Ok(DetectionResult {
        detector: Detector::Him,
        backend: None,
        flagged,
        statistic: stats.into_iter().map(Some).collect(),
        rule,
        diagnostics: Diagnostics::default(),
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipConfig {
    pub m_subsets: usize,
    /// Size of each random subset drawn from the other observations;
    /// `None` is `floor(n / 2)`.
    pub subset_size: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
}

impl MipConfig {
    pub fn new(alpha: f64, seed: u64) -> Self {
        MipConfig { m_subsets: 100, subset_size: None, alpha, seed }
    }
}

/// MIP by random group deletion.
///
/// For each observation `i`, `m_subsets` random subsets of the other rows
/// are drawn and the HIM statistic of `i` is computed within each subset
/// joined with `i`; `T_max` and `T_min` are the largest and smallest values.
/// Decision:
///
/// 1. rows with `T_max` at most the Bonferroni cutoff `chi2_1(1 - alpha/n)`
///    form the clean set;
/// 2. a remaining row with `T_min > chi2_1(1 - alpha)` is flagged outright;
/// 3. every other remaining row is flagged when its HIM statistic within
///    `clean ∪ {i}` exceeds `chi2_1(1 - alpha)`.
pub fn detect_mip(data: &Dataset, cfg: &MipConfig) -> Result<DetectionResult> {
    require_linear(data, "MIP")?;
    check_level("alpha", cfg.alpha)?;
    let n = data.n();
    let size = cfg.subset_size.unwrap_or(n / 2);
    if size < 3 || size + 1 > n {
        return Err(Error::InvalidParameter(format!("subset size {size} must lie in [3, n - 1] with n = {n}")));
    }
    if cfg.m_subsets == 0 {
        return Err(Error::InvalidParameter("m_subsets must be positive".into()));
    }
    let t = Stopwatch::start();
    let (x, y) = (data.x(), data.y());
    let base = rng::derive_labeled(cfg.seed, "mip", 0);
    let extremes: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::child(base, i as u64);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for _ in 0..cfg.m_subsets {
                let mut rows: Vec<usize> = sample(&mut r, n - 1, size).into_iter().map(|k| if k >= i { k + 1 } else { k }).collect();
                rows.push(i);
                rows.sort_unstable();
                let target = rows.binary_search(&i).expect("i was inserted");
                let full = full_correlations(x, y, &rows)?;
                let s = him_at(x, y, &rows, &full, target)?;
                lo = lo.min(s);
                hi = hi.max(s);
            }
            Ok((lo, hi))
        })
        .collect::<Result<_>>()?;
    let q_screen = chi2_1_quantile(1.0 - cfg.alpha / n as f64);
    let q = chi2_1_quantile(1.0 - cfg.alpha);
    let screened: Vec<usize> = (0..n).filter(|&i| extremes[i].1 > q_screen).collect();
    let clean: Vec<usize> = (0..n).filter(|&i| extremes[i].1 <= q_screen).collect();
    let mut notes = Vec::new();
    let mut flagged = Vec::new();
    let mut undecided = Vec::new();
    for &i in &screened {
        if extremes[i].0 > q {
            flagged.push(i);
        } else {
            undecided.push(i);
        }
    }
    if clean.len() >= 3 {
        let refined: Vec<bool> = undecided
            .par_iter()
            .map(|&i| {
                let mut rows = clean.clone();
                let pos = rows.binary_search(&i).unwrap_err();
                rows.insert(pos, i);
                let full = full_correlations(x, y, &rows)?;
                Ok(him_at(x, y, &rows, &full, pos)? > q)
            })
            .collect::<Result<_>>()?;
        flagged.extend(undecided.iter().zip(refined).filter(|(_, f)| *f).map(|(&i, _)| i));
    } else {
        notes.push(format!("clean set has {} rows; undecided rows are flagged", clean.len()));
        flagged.extend(&undecided);
    }
    let mut timings = Timings::new();
    timings.insert("total".into(), t.seconds());
    Ok(DetectionResult {
        detector: Detector::Mip,
        backend: None,
        flagged: IndexSet::new(flagged, n)?,
        statistic: extremes.iter().map(|e| Some(e.1)).collect(),
        rule: ThresholdRule { kind: ThresholdKind::ChiSquare { alpha: cfg.alpha / n as f64, df: 1 }, cutoff: q_screen },
        diagnostics: Diagnostics {
            secondary: Some(extremes.iter().map(|e| Some(e.0)).collect()),
            notes,
            ..Diagnostics::default()
        },
        timings,
    })
}

/// DF(LASSO): leave-one-out selection differences `delta_i`, standardized by
/// their sample mean and standard deviation; flag `|delta~_i| >= 2`.
pub fn detect_dflasso(data: &Dataset, spec: &SelectorSpec, seed: u64) -> Result<DetectionResult> {
    let n = data.n();
    if n < 10 {
        return Err(Error::InvalidInput(format!("DF(LASSO) needs at least 10 observations, got {n}")));
    }
    let t = Stopwatch::start();
    let opts = GdfOptions::new(rng::derive_labeled(seed, "cv", 0));
    let all = IndexSet::all(n);
    let (tau, _) = gdf_profile(data, spec, &all, &IndexSet::empty(), GdfMode::LeaveOneOut, opts)?;
    let obs: Vec<f64> = tau.observed().into_iter().map(f64::from).collect();
    let rule = ThresholdRule { kind: ThresholdKind::Standardized { k: 2.0 }, cutoff: 2.0 };
    let mut notes = Vec::new();
    if tau.missing() > 0 {
        notes.push(format!("{} refits failed", tau.missing()));
    }
    let k = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / k;
    let var = if obs.len() > 1 { obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    let (statistic, flagged) = if var > 0.0 {
        let sd = var.sqrt();
        let stat: Vec<Option<f64>> = tau.values.iter().map(|v| v.map(|d| (d as f64 - mean) / sd)).collect();
        let flagged = (0..n).filter(|&i| stat[i].is_some_and(|s| s.abs() >= rule.cutoff)).collect();
        (stat, flagged)
    } else {
        notes.push("selection differences have zero variance; nothing flagged".into());
        (vec![None; n], Vec::new())
    };
    let mut timings = Timings::new();
    timings.insert("total".into(), t.seconds());
    Ok(DetectionResult {
        detector: Detector::DfLasso,
        backend: None,
        flagged: IndexSet::new(flagged, n)?,
        statistic,
        rule,
        diagnostics: Diagnostics {
            secondary: Some(tau.values.iter().map(|v| v.map(f64::from)).collect()),
            notes,
            ..Diagnostics::default()
        },
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Selector;
    use ndarray::{concatenate, Axis};
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Dataset {
        let mut r = rng::rng(seed);
        let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut r));
        let y = Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut r));
        Dataset::new(y, x, Task::Linear).unwrap()
    }

    /// Direct transcription of the deleted-case estimator for one (i, j).
    fn rho_deleted_naive(x: &[f64], y: &[f64], i: usize) -> f64 {
        let n = x.len() as f64;
        let idx: Vec<usize> = (0..x.len()).filter(|&k| k != i).collect();
        let mx = idx.iter().map(|&k| x[k]).sum::<f64>() / n;
        let my = idx.iter().map(|&k| y[k]).sum::<f64>() / n;
        let sx = (idx.iter().map(|&k| (x[k] - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sy = (idx.iter().map(|&k| (y[k] - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        idx.iter().map(|&k| (x[k] - mx) * (y[k] - my)).sum::<f64>() / ((n - 1.0) * sx * sy)
    }

    #[test]
    fn deleted_correlation_matches_transcription() {
        let d = gaussian(12, 3, 1);
        let rows: Vec<usize> = (0..12).collect();
        let y: Vec<f64> = d.y().to_vec();
        for i in [0, 5, 11] {
            let got = marginal_correlations(d.x(), d.y(), &rows, Some(i)).unwrap();
            for j in 0..3 {
                let col: Vec<f64> = d.x().column(j).to_vec();
                assert!((got[j] - rho_deleted_naive(&col, &y, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_correlation_gives_zero_him() {
        let mut r = rng::rng(4);
        let x = Array2::from_shape_fn((20, 1), |_| StandardNormal.sample(&mut r));
        let y = x.column(0).to_owned();
        let d = Dataset::new(y, x, Task::Linear).unwrap();
        let res = detect_him(&d, 0.05).unwrap();
        assert!(res.flagged.is_empty());
        assert!(res.statistic.iter().all(|s| s.unwrap().abs() < 1e-20));
    }

    #[test]
    fn him_null_flag_rate() {
        let mut flagged = 0;
        for seed in 0..100 {
            let d = gaussian(100, 200, 1000 + seed);
            flagged += detect_him(&d, 0.05).unwrap().flagged.len();
        }
        let rate = flagged as f64 / (100.0 * 100.0);
        assert!(rate <= 0.08, "{rate}");
    }

    #[test]
    fn him_duplicated_rows_are_small() {
        let base = gaussian(50, 200, 9);
        let x = concatenate(Axis(0), &[base.x().view(), base.x().view()]).unwrap();
        let y = concatenate(Axis(0), &[base.y().view(), base.y().view()]).unwrap();
        let d = Dataset::new(y, x, Task::Linear).unwrap();
        let dup = detect_him(&d, 0.05).unwrap();
        let orig = detect_him(&base, 0.05).unwrap();
        for i in 0..50 {
            let (a, b) = (dup.statistic[i].unwrap(), dup.statistic[i + 50].unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + a), "copies of row {i} differ");
            // Deleting one copy leaves its twin in place, so the statistic
            // never exceeds that of the row in the undoubled data.
            assert!(a <= orig.statistic[i].unwrap(), "row {i}");
            if !orig.flagged.contains(i) {
                assert!(!dup.flagged.contains(i) && !dup.flagged.contains(i + 50));
            }
        }
    }

    #[test]
    fn constant_column_is_reported() {
        let mut d = gaussian(20, 4, 2).into_parts();
        d.1.column_mut(2).fill(1.0);
        let d = Dataset::new(d.0, d.1, Task::Linear).unwrap();
        assert!(matches!(detect_him(&d, 0.05), Err(Error::ZeroSdColumn(2))));
    }

    #[test]
    fn mip_null_flag_rate() {
        let mut flagged = 0;
        let reps = 30;
        for seed in 0..reps {
            let d = gaussian(50, 200, 2000 + seed);
            let res = detect_mip(&d, &MipConfig { m_subsets: 50, ..MipConfig::new(0.05, seed) }).unwrap();
            flagged += res.flagged.len();
        }
        let rate = flagged as f64 / (reps as f64 * 50.0);
        assert!(rate <= 0.08, "{rate}");
    }

    #[test]
    fn mip_finds_gross_outliers() {
        let mut d = gaussian(50, 200, 77).into_parts();
        for i in 0..3 {
            d.0[i] += 30.0;
            for j in 0..10 {
                d.1[[i, j]] += 30.0;
            }
        }
        let d = Dataset::new(d.0, d.1, Task::Linear).unwrap();
        let res = detect_mip(&d, &MipConfig { m_subsets: 50, ..MipConfig::new(0.05, 1) }).unwrap();
        for i in 0..3 {
            assert!(res.flagged.contains(i), "{:?}", res.flagged);
        }
        assert!(detect_mip(&d, &MipConfig { subset_size: Some(50), ..MipConfig::new(0.05, 1) }).is_err());
    }

    #[test]
    fn dflasso_flags_gross_response_outlier() {
        let mut r = rng::rng(31);
        let n = 50;
        let x = Array2::from_shape_fn((n, 60), |_| StandardNormal.sample(&mut r));
        let mut y = Array1::from_shape_fn(n, |i| {
            let e: f64 = StandardNormal.sample(&mut r);
            (0..5).map(|j| 1.5 * x[[i, j]]).sum::<f64>() + e
        });
        y[0] += 40.0;
        let d = Dataset::new(y, x, Task::Linear).unwrap();
        let res = detect_dflasso(&d, &SelectorSpec::new(Selector::Lasso), 3).unwrap();
        // Recompute the standardized value of row 0 from the raw differences.
        let raw: Vec<f64> = res.diagnostics.secondary.as_ref().unwrap().iter().map(|v| v.unwrap()).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!((res.statistic[0].unwrap() - (raw[0] - mean) / sd).abs() < 1e-12);
        assert_eq!(res.flagged.contains(0), raw[0] >= mean + 2.0 * sd);
        assert!(res.flagged.contains(0), "delta_0 = {} mean {mean} sd {sd}", raw[0]);
    }
}
