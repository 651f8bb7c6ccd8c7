//! Core data containers shared by every other module.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Linear,
    Logistic,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Task::Linear),
            "logistic" => Ok(Task::Logistic),
            other => Err(Error::InvalidInput(format!("unknown task `{other}`"))),
        }
    }
}

/// Response, design matrix and model kind.
///
/// Column means and (population) standard deviations are cached at
/// construction; penalized fits standardize with them.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array2<f64>,
    task: Task,
    col_mean: Array1<f64>,
    col_sd: Array1<f64>,
}

/// Validates raw inputs and builds a [`Dataset`].
pub fn validate_dataset(y: Array1<f64>, x: Array2<f64>, task: Task) -> Result<Dataset> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} entries but design has {n} rows",
            y.len()
        )));
    }
    if n < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 observations, got {n}")));
    }
    if p < 1 {
        return Err(Error::InvalidInput("need at least one predictor".into()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("y[{i}]")));
    }
    if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("x[{i}, {j}]")));
    }
    if task == Task::Logistic {
        if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::DegenerateResponse(format!(
                "logistic response y[{i}] = {} is not in {{0, 1}}",
                y[i]
            )));
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == n {
            return Err(Error::DegenerateResponse("logistic response has a single class".into()));
        }
    }
    Ok(Dataset::from_parts_unchecked(y, x, task))
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>, task: Task) -> Result<Self> {
        validate_dataset(y, x, task)
    }

    /// Builds the container without validation. Used for row subsets, which
    /// may legitimately be small or (logistic) single-class.
    pub(crate) fn from_parts_unchecked(y: Array1<f64>, x: Array2<f64>, task: Task) -> Self {
        let (col_mean, col_sd) = column_moments(&x);
        Dataset { y, x, task, col_mean, col_sd }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn column_means(&self) -> &Array1<f64> {
        &self.col_mean
    }

    /// Population standard deviations (divisor `n`).
    pub fn column_sds(&self) -> &Array1<f64> {
        &self.col_sd
    }

    /// Columns centred and scaled to unit population sd. Constant columns
    /// become all-zero.
    pub fn standardized_x(&self) -> Array2<f64> {
        let mut z = self.x.clone();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.col_mean[j], self.col_sd[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.fill(0.0);
            }
        }
        z
    }

    /// Rows `rows` (in the given order) as a new dataset. No validation.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let y = self.y.select(Axis(0), rows);
        let x = self.x.select(Axis(0), rows);
        Dataset::from_parts_unchecked(y, x, self.task)
    }

    pub fn into_parts(self) -> (Array1<f64>, Array2<f64>, Task) {
        (self.y, self.x, self.task)
    }
}

fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows().max(1) as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let sd = x
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(col, &m)| {
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            let s = (ss / n).sqrt();
            // Columns that are constant up to rounding are treated as constant.
            if s <= 1e-12 * (1.0 + m.abs()) {
                0.0
            } else {
                s
            }
        })
        .collect();
    (mean, sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selector {
    #[serde(rename = "LASSO")]
    Lasso,
    #[serde(rename = "SLASSO")]
    ScaledLasso,
    #[serde(rename = "SCAD")]
    Scad,
    #[serde(rename = "MCP")]
    Mcp,
}

impl Selector {
    pub const ALL: [Selector; 4] = [Selector::Lasso, Selector::ScaledLasso, Selector::Scad, Selector::Mcp];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Lasso => "LASSO",
            Selector::ScaledLasso => "SLASSO",
            Selector::Scad => "SCAD",
            Selector::Mcp => "MCP",
        }
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(Selector::Lasso),
            "slasso" | "scaled-lasso" | "scaled_lasso" => Ok(Selector::ScaledLasso),
            "scad" => Ok(Selector::Scad),
            "mcp" => Ok(Selector::Mcp),
            other => Err(Error::InvalidInput(format!("unknown selector `{other}`"))),
        }
    }
}

/// A penalized fit. `beta` and `intercept` are on the original predictor
/// scale; `support[j]` is true exactly when `beta[j] != 0.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFit {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub support: Vec<bool>,
    pub lambda: f64,
    pub selector: Selector,
    pub sigma_hat: Option<f64>,
    pub iterations: usize,
}

impl SelectionFit {
    pub fn support_size(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    pub fn linear_predictor(&self, x: &Array2<f64>) -> Array1<f64> {
        let beta = Array1::from(self.beta.clone());
        x.dot(&beta) + self.intercept
    }
}

/// Sorted set of distinct 0-based row indices.
///
/// Reports and CSV files present indices 1-based; the library is 0-based
/// throughout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Sorts and deduplicates; fails if any index is `>= n`.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.last().filter(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!("index {bad} out of bounds for n = {n}")));
        }
        Ok(IndexSet { indices })
    }

    pub fn empty() -> Self {
        IndexSet::default()
    }

    pub fn all(n: usize) -> Self {
        IndexSet { indices: (0..n).collect() }
    }

    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        IndexSet { indices }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn complement(&self, n: usize) -> IndexSet {
        IndexSet::from_sorted((0..n).filter(|&i| !self.contains(i)).collect())
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v: Vec<usize> = self.indices.iter().chain(other.indices.iter()).copied().collect();
        v.sort_unstable();
        v.dedup();
        IndexSet::from_sorted(v)
    }

    pub fn intersection_len(&self, other: &IndexSet) -> usize {
        self.iter().filter(|&i| other.contains(i)).count()
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.intersection_len(other) == 0
    }

    pub fn with(&self, i: usize) -> IndexSet {
        let mut v = self.indices.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        IndexSet::from_sorted(v)
    }

    pub fn without(&self, i: usize) -> IndexSet {
        IndexSet::from_sorted(self.iter().filter(|&k| k != i).collect())
    }

    /// 1-based copy for reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        IndexSet::from_sorted(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn design(n: usize, p: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |(i, j)| ((i * 7 + j * 13) % 11) as f64 - 5.0 + 0.1 * j as f64)
    }

    #[test]
    fn accepts_wide_linear_data() {
        let d = validate_dataset(Array1::linspace(0.0, 1.0, 50), design(50, 200), Task::Linear).unwrap();
        assert_eq!((d.n(), d.p()), (50, 200));
    }

    #[test]
    fn rejects_row_mismatch() {
        let err = validate_dataset(Array1::zeros(50), design(49, 200), Task::Linear).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_single_class_logistic() {
        let err = validate_dataset(Array1::zeros(100), design(100, 200), Task::Logistic).unwrap_err();
        assert!(matches!(err, Error::DegenerateResponse(_)));
    }

    #[test]
    fn rejects_non_finite_and_tiny() {
        let mut x = design(10, 3);
        x[[4, 1]] = f64::NAN;
        assert!(matches!(
            validate_dataset(Array1::zeros(10), x, Task::Linear),
            Err(Error::NonFiniteValue(_))
        ));
        assert!(matches!(
            validate_dataset(Array1::zeros(3), design(3, 3), Task::Linear),
            Err(Error::InvalidInput(_))
        ));
        let mut y = Array1::zeros(10);
        y[2] = 0.5;
        assert!(matches!(
            validate_dataset(y, design(10, 3), Task::Logistic),
            Err(Error::DegenerateResponse(_))
        ));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let y = Array1::from_shape_fn(20, |i| (i as f64).sin() * 1e-3 + 1e9);
        let x = design(20, 5).mapv(|v| v / 3.0);
        let d = validate_dataset(y.clone(), x.clone(), Task::Linear).unwrap();
        let (y2, x2, _) = d.into_parts();
        assert!(y.iter().zip(y2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(x.iter().zip(x2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn standardization_has_zero_mean_unit_sd() {
        let x = design(40, 6).mapv(|v| 3.0 * v + 100.0);
        let d = validate_dataset(Array1::zeros(40), x, Task::Linear).unwrap();
        let z = d.standardized_x();
        for col in z.axis_iter(Axis(1)) {
            let m = col.mean().unwrap();
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 40.0).sqrt();
            assert!(m.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn index_set_ops() {
        let s = IndexSet::new(vec![5, 1, 3, 3], 6).unwrap();
        assert_eq!(s.as_slice(), &[1, 3, 5]);
        assert_eq!(s.complement(6).as_slice(), &[0, 2, 4]);
        assert_eq!(s.with(2).as_slice(), &[1, 2, 3, 5]);
        assert_eq!(s.without(3).as_slice(), &[1, 5]);
        assert_eq!(s.one_based(), vec![2, 4, 6]);
        assert!(IndexSet::new(vec![6], 6).is_err());
    }
}
