//! The GDF influence measure: how many predictors change selection status
//! when one observation is removed from, or added to, a reference set.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::selectors::{accept_near_stationary, cross_validate, fit_following_path, fit_path, fit_scaled_lasso, fit_scaled_lasso_warm, SelectorSpec};
use crate::{Dataset, Error, IndexSet, Result, SelectionFit, Selector};

/// Hamming distance between two support indicators.
pub fn gdf_tau(full_support: &[bool], other_support: &[bool]) -> Result<u32> {
    if full_support.len() != other_support.len() {
        return Err(Error::DimensionMismatch(format!(
            "support vectors of length {} and {}",
            full_support.len(),
            other_support.len()
        )));
    }
    Ok(full_support.iter().zip(other_support).filter(|(a, b)| a != b).count() as u32)
}

/// How each candidate's dataset is formed from the reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GdfMode {
    /// Reference set minus the candidate.
    LeaveOneOut,
    /// Reference set plus the candidate.
    Augment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdfOptions {
    /// Re-run cross-validation on every modified dataset instead of reusing
    /// the reference penalty level.
    pub retune_per_deletion: bool,
    pub seed: u64,
}

impl GdfOptions {
    pub fn new(seed: u64) -> Self {
        GdfOptions { retune_per_deletion: false, seed }
    }
}

/// GDF values for a list of observations. `None` marks a refit that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSequence {
    /// Observations the values belong to (0-based, ascending).
    pub indices: IndexSet,
    pub values: Vec<Option<u32>>,
    pub selector: Selector,
    /// The reference set each value was computed against.
    pub base_indices: IndexSet,
    pub p: usize,
}

impl TauSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Non-missing values in index order.
    pub fn observed(&self) -> Vec<u32> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn get(&self, index: usize) -> Option<u32> {
        self.indices.as_slice().binary_search(&index).ok().and_then(|k| self.values[k])
    }

    /// `index,tau` rows with 1-based indices; missing values are left empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "tau"])?;
        for (i, v) in self.indices.iter().zip(&self.values) {
            out.write_record([(i + 1).to_string(), v.map(|t| t.to_string()).unwrap_or_default()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-predictor selection flips: row `k` belongs to the `k`-th observation
/// of the matching [`TauSequence`], and its sum is that observation's τ.
/// Rows of failed refits are all zero and marked absent.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrix {
    pub xi: Array2<u8>,
    pub present: Vec<bool>,
}

/// Sample-covariance check on the columns of a [`XiMatrix`]: since the
/// variance of a row sum cannot be negative, the average off-diagonal
/// covariance is at least `-avg_var / (p - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBound {
    pub avg_covariance: f64,
    pub avg_variance: f64,
    pub bound: f64,
    pub holds: bool,
}

impl XiMatrix {
    pub fn rows(&self) -> usize {
        self.xi.nrows()
    }

    pub fn row_sums(&self) -> Vec<u32> {
        self.xi.rows().into_iter().map(|r| r.iter().map(|&v| v as u32).sum()).collect()
    }

    /// Covariance bound over the present rows among the first `rows` rows.
    /// The inequality is decided in exact integer arithmetic from a direct
    /// sum over column pairs; the averages are reported for display.
    pub fn covariance_bound(&self, rows: usize) -> Option<CovarianceBound> {
        let p = self.xi.ncols();
        let used: Vec<usize> = (0..rows.min(self.rows())).filter(|&r| self.present[r]).collect();
        let m = used.len() as i128;
        if m < 2 || p < 2 {
            return None;
        }
        let col_sum: Vec<i128> = (0..p).map(|j| used.iter().map(|&r| self.xi[[r, j]] as i128).sum()).collect();
        // m(m-1) * sample covariance of columns j, l.
        let scaled_cov = |j: usize, l: usize| -> i128 {
            let both: i128 = used.iter().map(|&r| (self.xi[[r, j]] & self.xi[[r, l]]) as i128).sum();
            m * both - col_sum[j] * col_sum[l]
        };
        let mut diag = 0i128;
        let mut off = 0i128;
        for j in 0..p {
            diag += scaled_cov(j, j);
            for l in (j + 1)..p {
                off += 2 * scaled_cov(j, l);
            }
        }
        let denom = (m * (m - 1)) as f64;
        let avg_variance = diag as f64 / denom / p as f64;
        let avg_covariance = off as f64 / denom / (p * (p - 1)) as f64;
        Some(CovarianceBound {
            avg_covariance,
            avg_variance,
            bound: -avg_variance / (p - 1) as f64,
            holds: off + diag >= 0,
        })
    }

    /// `index,x1..xp` rows with 1-based indices; absent rows are left empty.
    pub fn write_csv<W: Write>(&self, indices: &IndexSet, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let p = self.xi.ncols();
        let mut header = vec!["index".to_string()];
        header.extend((1..=p).map(|j| format!("x{j}")));
        out.write_record(&header)?;
        for (k, i) in indices.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            if self.present[k] {
                rec.extend(self.xi.row(k).iter().map(|v| v.to_string()));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), p));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A selector tuned once on a reference set, ready to refit perturbed
/// versions of it.
///
/// LASSO, SCAD and MCP reuse the penalty level chosen by cross-validation
/// on the reference set (unless re-tuning is requested). The scaled LASSO
/// keeps its universal level `lambda0` and re-estimates the noise scale on
/// each refit, since the scale estimate is part of the selector.
pub struct GdfEngine<'a> {
    data: &'a Dataset,
    spec: SelectorSpec,
    reference: IndexSet,
    opts: GdfOptions,
    lambda: f64,
    reference_fit: SelectionFit,
}

impl<'a> GdfEngine<'a> {
    pub fn new(data: &'a Dataset, spec: &SelectorSpec, reference: IndexSet, opts: GdfOptions) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::EmptyInput);
        }
        if reference.as_slice().last().is_some_and(|&i| i >= data.n()) {
            return Err(Error::InvalidInput("reference index out of range".into()));
        }
        let ref_data = data.subset(reference.as_slice());
        let (lambda, reference_fit) = Self::tune_and_fit(&ref_data, spec, opts.seed)?;
        Ok(GdfEngine { data, spec: spec.clone(), reference, opts, lambda, reference_fit })
    }

    fn tune_and_fit(data: &Dataset, spec: &SelectorSpec, seed: u64) -> Result<(f64, SelectionFit)> {
        if spec.selector == Selector::ScaledLasso {
            let fit = accept_near_stationary(data, spec, fit_scaled_lasso(data, spec))?;
            return Ok((fit.lambda, fit));
        }
        let cv = cross_validate(data, spec, seed)?;
        let fit = accept_near_stationary(data, spec, fit_following_path(data, spec, cv.lambda_star))?;
        Ok((cv.lambda_star, fit))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn reference(&self) -> &IndexSet {
        &self.reference
    }

    pub fn reference_fit(&self) -> &SelectionFit {
        &self.reference_fit
    }

    fn refit(&self, rows: &IndexSet) -> Result<SelectionFit> {
        let d = self.data.subset(rows.as_slice());
        if self.opts.retune_per_deletion {
            return Self::tune_and_fit(&d, &self.spec, self.opts.seed).map(|(_, f)| f);
        }
        let fit = match self.spec.selector {
            Selector::ScaledLasso => fit_scaled_lasso_warm(&d, &self.spec, Some(&self.reference_fit)),
            _ => fit_path(&d, &self.spec, self.lambda, Some(&self.reference_fit)),
        };
        accept_near_stationary(&d, &self.spec, fit)
    }

    /// Selection flips for one observation, or `None` if the refit failed.
    pub fn flips(&self, index: usize, mode: GdfMode) -> Option<Vec<bool>> {
        let rows = match mode {
            GdfMode::LeaveOneOut => {
                if !self.reference.contains(index) {
                    return None;
                }
                self.reference.without(index)
            }
            GdfMode::Augment => {
                if self.reference.contains(index) || index >= self.data.n() {
                    return None;
                }
                self.reference.with(index)
            }
        };
        match self.refit(&rows) {
            Ok(fit) => Some(self.reference_fit.support.iter().zip(&fit.support).map(|(a, b)| a != b).collect()),
            Err(e) => {
                log::debug!("refit for observation {} failed: {e}", index + 1);
                None
            }
        }
    }

    /// τ and flip matrix for each candidate, computed in parallel and
    /// assembled in candidate order.
    pub fn profile(&self, candidates: &IndexSet, mode: GdfMode) -> Result<(TauSequence, XiMatrix)> {
        let p = self.data.p();
        match mode {
            GdfMode::LeaveOneOut if !candidates.iter().all(|i| self.reference.contains(i)) => {
                return Err(Error::InvalidInput("leave-one-out candidates must lie in the reference set".into()));
            }
            GdfMode::Augment if !candidates.is_disjoint(&self.reference) => {
                return Err(Error::InvalidInput("augment candidates must lie outside the reference set".into()));
            }
            _ => {}
        }
        if candidates.as_slice().last().is_some_and(|&i| i >= self.data.n()) {
            return Err(Error::InvalidInput("candidate index out of range".into()));
        }
        let rows: Vec<Option<Vec<bool>>> =
            candidates.as_slice().par_iter().map(|&i| self.flips(i, mode)).collect();
        let mut xi = Array2::<u8>::zeros((rows.len(), p));
        let mut present = vec![false; rows.len()];
        let mut values = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            match row {
                Some(r) => {
                    present[k] = true;
                    for (j, &f) in r.iter().enumerate() {
                        xi[[k, j]] = f as u8;
                    }
                    values.push(Some(r.iter().filter(|&&f| f).count() as u32));
                }
                None => values.push(None),
            }
        }
        let tau = TauSequence {
            indices: candidates.clone(),
            values,
            selector: self.spec.selector,
            base_indices: self.reference.clone(),
            p,
        };
        Ok((tau, XiMatrix { xi, present }))
    }
}

/// GDF profile of `candidates`.
///
/// In [`GdfMode::LeaveOneOut`] the reference set is `base ∪ candidates` and
/// each candidate is deleted from it; in [`GdfMode::Augment`] the reference
/// set is `base` and each candidate (which must lie outside it) is added.
pub fn gdf_profile(
    data: &Dataset,
    spec: &SelectorSpec,
    candidates: &IndexSet,
    base: &IndexSet,
    mode: GdfMode,
    opts: GdfOptions,
) -> Result<(TauSequence, XiMatrix)> {
    let reference = match mode {
        GdfMode::LeaveOneOut => base.union(candidates),
        GdfMode::Augment => base.clone(),
    };
    if candidates.is_empty() {
        let tau = TauSequence {
            indices: IndexSet::empty(),
            values: Vec::new(),
            selector: spec.selector,
            base_indices: reference,
            p: data.p(),
        };
        return Ok((tau, XiMatrix { xi: Array2::zeros((0, data.p())), present: Vec::new() }));
    }
    GdfEngine::new(data, spec, reference, opts)?.profile(candidates, mode)
}


#[cfg(test)]
mod props {
    use super::gdf_tau;
    use proptest::prelude::*;

    fn pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>, Vec<bool>)> {
        (1usize..64).prop_flat_map(|p| {
            let v = || prop::collection::vec(any::<bool>(), p);
            (v(), v(), v())
        })
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric((a, b, c) in pair()) {
            let ab = gdf_tau(&a, &b).unwrap();
            prop_assert_eq!(ab, gdf_tau(&b, &a).unwrap());
            prop_assert_eq!(gdf_tau(&a, &a).unwrap(), 0);
            prop_assert!(ab as usize <= a.len());
            prop_assert!(gdf_tau(&a, &c).unwrap() <= ab + gdf_tau(&b, &c).unwrap());
        }
    }
}
