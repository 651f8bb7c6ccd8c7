//! Simulation designs, perturbation models and power / false-positive-rate
//! scoring of detectors.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::Task;
use crate::detection::{
    clusmip_sweep, detect_dflasso, detect_him, detect_mip, Backend, ClusMipConfig, Detector, MipConfig,
};
use crate::selectors::SelectorSpec;
use crate::{rng, Dataset, Error, IndexSet, Result, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Perturbation {
    /// Shift the response of each contaminated row by `kappa * sigma`.
    #[serde(rename = "I_Y")]
    IY,
    /// Shift the first `perturbed_columns` predictors by `kappa`.
    #[serde(rename = "II_X")]
    IIX,
    /// Both of the above.
    #[serde(rename = "III_XY")]
    IIIXY,
    /// Predictor shift for the logistic model; the labels come from the
    /// unshifted predictors.
    #[serde(rename = "Logistic_X")]
    LogisticX,
}

impl Perturbation {
    pub fn name(self) -> &'static str {
        match self {
            Perturbation::IY => "I_Y",
            Perturbation::IIX => "II_X",
            Perturbation::IIIXY => "III_XY",
            Perturbation::LogisticX => "Logistic_X",
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok(match key.as_str() {
            "iy" | "i" => Perturbation::IY,
            "iix" | "ii" => Perturbation::IIX,
            "iiixy" | "iii" => Perturbation::IIIXY,
            "logisticx" | "logistic" => Perturbation::LogisticX,
            _ => return Err(Error::InvalidInput(format!("unknown perturbation `{s}`"))),
        })
    }
}

/// `s` coefficients equal to `value` on the first `s` predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub s: usize,
    pub value: f64,
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec { s: 5, value: 1.5 }
    }
}

impl BetaSpec {
    pub fn vector(&self, p: usize) -> Result<Array1<f64>> {
        if self.s > p {
            return Err(Error::InvalidParameter(format!("{} non-zero coefficients exceed p = {p}", self.s)));
        }
        Ok(Array1::from_shape_fn(p, |j| if j < self.s { self.value } else { 0.0 }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub task: Task,
    #[serde(default)]
    pub beta: BetaSpec,
    pub n_infl: usize,
    pub perturbation: Perturbation,
    pub kappa: f64,
    pub n_reps: usize,
    pub seed: u64,
    /// Number of leading predictors shifted by the X perturbations.
    #[serde(default = "default_perturbed_columns")]
    pub perturbed_columns: usize,
    /// Noise standard deviation of the linear model.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_perturbed_columns() -> usize {
    10
}

fn default_sigma() -> f64 {
    1.0
}

impl SimConfig {
    /// `(n, p) = (50, 200)` linear or `(100, 200)` logistic, ten contaminated
    /// rows, 100 replicates.
    pub fn desk(task: Task, rho: f64, perturbation: Perturbation, kappa: f64, seed: u64) -> Self {
        let n = if task == Task::Linear { 50 } else { 100 };
        SimConfig {
            n,
            p: 200,
            rho,
            task,
            beta: BetaSpec::default(),
            n_infl: 10,
            perturbation,
            kappa,
            n_reps: 100,
            seed,
            perturbed_columns: 10,
            sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must satisfy |rho| < 1, got {}", self.rho)));
        }
        if self.n_infl >= self.n {
            return Err(Error::InvalidParameter(format!("n_infl = {} must be below n = {}", self.n_infl, self.n)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.n < 4 || self.p == 0 || self.n_reps == 0 {
            return Err(Error::InvalidParameter("need n >= 4, p >= 1 and at least one replicate".into()));
        }
        if self.perturbed_columns > self.p {
            return Err(Error::InvalidParameter(format!(
                "cannot perturb {} columns with p = {}",
                self.perturbed_columns, self.p
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        let logistic_pert = self.perturbation == Perturbation::LogisticX;
        if logistic_pert != (self.task == Task::Logistic) {
            return Err(Error::InvalidParameter(format!(
                "perturbation {} does not apply to the {:?} task",
                self.perturbation, self.task
            )));
        }
        self.beta.vector(self.p).map(|_| ())
    }

    pub fn true_influential(&self) -> IndexSet {
        IndexSet::all(self.n_infl)
    }
}

/// Rows i.i.d. `N(0, Sigma)` with `Sigma_jk = rho^|j-k|`, built column by
/// column as an AR(1) sequence.
pub fn generate_design(n: usize, p: usize, rho: f64, seed: u64) -> Result<Array2<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must satisfy |rho| < 1, got {rho}")));
    }
    let mut r = rng::rng(seed);
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let mut prev: f64 = 0.0;
        for j in 0..p {
            let e: f64 = StandardNormal.sample(&mut r);
            prev = if j == 0 { e } else { rho * prev + scale * e };
            x[[i, j]] = prev;
        }
    }
    Ok(x)
}

/// Linear: `y = X beta + eps` with `eps ~ N(0, sigma^2)`; logistic:
/// `y ~ Bernoulli(1 / (1 + exp(-X beta)))`.
pub fn generate_outcome(x: &Array2<f64>, beta: &Array1<f64>, task: Task, sigma: f64, seed: u64) -> Result<Array1<f64>> {
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!("beta has {} entries, X has {} columns", beta.len(), x.ncols())));
    }
    let mut r = rng::rng(seed);
    let eta = x.dot(beta);
    Ok(match task {
        Task::Linear => eta.mapv(|e| {
            let z: f64 = StandardNormal.sample(&mut r);
            e + sigma * z
        }),
        Task::Logistic => eta.mapv(|e| {
            let pr = 1.0 / (1.0 + (-e).exp());
            f64::from(u8::from(r.random::<f64>() < pr))
        }),
    })
}

/// Contaminates rows `0..n_infl` according to `cfg.perturbation`.
pub fn perturb(data: &Dataset, cfg: &SimConfig) -> Result<Dataset> {
    if cfg.n_infl > data.n() {
        return Err(Error::InvalidParameter(format!("n_infl = {} exceeds n = {}", cfg.n_infl, data.n())));
    }
    let (mut y, mut x) = (data.y().clone(), data.x().clone());
    let shift_y = matches!(cfg.perturbation, Perturbation::IY | Perturbation::IIIXY);
    let shift_x = matches!(cfg.perturbation, Perturbation::IIX | Perturbation::IIIXY | Perturbation::LogisticX);
    let cols = cfg.perturbed_columns.min(data.p());
    for i in 0..cfg.n_infl {
        if shift_y {
            y[i] += cfg.kappa * cfg.sigma;
        }
        if shift_x {
            for j in 0..cols {
                x[[i, j]] += cfg.kappa;
            }
        }
    }
    Dataset::new(y, x, data.task())
}

/// Clean data for replicate `rep`. Seeds depend on `(seed, rep)` only, so
/// every kappa sees the same underlying draws.
pub fn clean_replicate(cfg: &SimConfig, rep: usize) -> Result<Dataset> {
    let base = rng::derive(cfg.seed, rep as u64);
    let x = generate_design(cfg.n, cfg.p, cfg.rho, rng::derive_labeled(base, "design", 0))?;
    let beta = cfg.beta.vector(cfg.p)?;
    let outcome_seed = rng::derive_labeled(base, "outcome", 0);
    let y = generate_outcome(&x, &beta, cfg.task, cfg.sigma, outcome_seed)?;
    Dataset::new(y, x, cfg.task)
}

/// Perturbed data for replicate `rep`.
pub fn replicate(cfg: &SimConfig, rep: usize) -> Result<Dataset> {
    perturb(&clean_replicate(cfg, rep)?, cfg)
}

/// Flags of one detector on one dataset, possibly one set per backend.
pub trait SimDetector: Sync {
    fn label(&self) -> String;

    /// `(backend label, flags)` pairs. A backend-level error excludes only
    /// that backend from the replicate.
    fn detect(&self, data: &Dataset, seed: u64) -> Result<Vec<(String, Result<IndexSet>)>>;
}

/// Label used for detectors without a threshold backend.
pub const NO_BACKEND: &str = "-";

pub struct ClusMipDetector {
    pub config: ClusMipConfig,
    pub backends: Vec<Backend>,
}

impl ClusMipDetector {
    pub fn new(selector: Selector, alpha: f64, backends: &[Backend]) -> Self {
        ClusMipDetector { config: ClusMipConfig::new(SelectorSpec::new(selector), alpha, 0), backends: backends.to_vec() }
    }
}

impl SimDetector for ClusMipDetector {
    fn label(&self) -> String {
        Detector::ClusMip(self.config.spec.selector).to_string()
    }

    fn detect(&self, data: &Dataset, seed: u64) -> Result<Vec<(String, Result<IndexSet>)>> {
        let cfg = ClusMipConfig { seed, ..self.config.clone() };
        let sweep = clusmip_sweep(data, &cfg, &self.backends)?;
        Ok(sweep.results.into_iter().map(|(b, r)| (b.name().to_string(), r.map(|d| d.flagged))).collect())
    }
}

pub struct DfLassoDetector;

impl SimDetector for DfLassoDetector {
    fn label(&self) -> String {
        Detector::DfLasso.to_string()
    }

    fn detect(&self, data: &Dataset, seed: u64) -> Result<Vec<(String, Result<IndexSet>)>> {
        let r = detect_dflasso(data, &SelectorSpec::new(Selector::Lasso), seed)?;
        Ok(vec![(NO_BACKEND.into(), Ok(r.flagged))])
    }
}

pub struct MipDetector(pub MipConfig);

impl SimDetector for MipDetector {
    fn label(&self) -> String {
        Detector::Mip.to_string()
    }

    fn detect(&self, data: &Dataset, seed: u64) -> Result<Vec<(String, Result<IndexSet>)>> {
        let r = detect_mip(data, &MipConfig { seed, ..self.0.clone() })?;
        Ok(vec![(NO_BACKEND.into(), Ok(r.flagged))])
    }
}

pub struct HimDetector(pub f64);

impl SimDetector for HimDetector {
    fn label(&self) -> String {
        Detector::Him.to_string()
    }

    fn detect(&self, data: &Dataset, _seed: u64) -> Result<Vec<(String, Result<IndexSet>)>> {
        Ok(vec![(NO_BACKEND.into(), Ok(detect_him(data, self.0)?.flagged))])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub detector: String,
    pub backend: String,
    pub kappa: f64,
    pub rep: usize,
    /// `None` when there are no contaminated rows.
    pub power: Option<f64>,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub detector: String,
    pub backend: String,
    pub kappa: f64,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub perturbation: Perturbation,
    pub detector: String,
    pub backend: String,
    pub kappa: f64,
    pub reps: usize,
    pub failures: usize,
    pub power: Option<f64>,
    pub power_se: Option<f64>,
    pub fpr: f64,
    pub fpr_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub config: SimConfig,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<FailureRecord>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() } else { 0.0 };
    (mean, se)
}

impl PowerReport {
    /// Per (detector, backend, kappa) means with Monte Carlo standard
    /// errors, in first-appearance order.
    pub fn summary(&self) -> Vec<CellSummary> {
        summarize(self.config.perturbation, &self.records, &self.failures)
    }

    /// Appends another report over the same design (e.g. a different kappa
    /// or further replicates).
    pub fn merge(&mut self, other: PowerReport) {
        self.records.extend(other.records);
        self.failures.extend(other.failures);
    }

    /// Long format: `detector,backend,kappa,rep,power,fpr`.
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["detector", "backend", "kappa", "rep", "power", "fpr"])?;
        for r in &self.records {
            out.write_record([
                r.detector.clone(),
                r.backend.clone(),
                r.kappa.to_string(),
                r.rep.to_string(),
                r.power.map(|p| p.to_string()).unwrap_or_default(),
                r.fpr.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per panel cell: perturbation, detector, backend, kappa, means,
    /// standard errors and replicate counts.
    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> Result<()> {
        write_aggregate_csv(&self.summary(), w)
    }
}

/// Per (detector, backend, kappa) means with Monte Carlo standard errors,
/// in first-appearance order.
pub fn summarize(perturbation: Perturbation, records: &[ReplicateRecord], failures: &[FailureRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, String, f64)> = Vec::new();
    for r in records.iter().map(|r| (&r.detector, &r.backend, r.kappa)).chain(
        failures.iter().map(|f| (&f.detector, &f.backend, f.kappa)),
    ) {
        if !keys.iter().any(|k| k.0 == *r.0 && k.1 == *r.1 && k.2 == r.2) {
            keys.push((r.0.clone(), r.1.clone(), r.2));
        }
    }
    keys.into_iter()
        .map(|(detector, backend, kappa)| {
            let recs: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.detector == detector && r.backend == backend && r.kappa == kappa)
                .collect();
            let n_failed = failures
                .iter()
                .filter(|f| f.detector == detector && f.backend == backend && f.kappa == kappa)
                .count();
            let powers: Vec<f64> = recs.iter().filter_map(|r| r.power).collect();
            let fprs: Vec<f64> = recs.iter().map(|r| r.fpr).collect();
            let (power, power_se) = if powers.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_se(&powers);
                (Some(m), Some(s))
            };
            let (fpr, fpr_se) = if fprs.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&fprs) };
            CellSummary {
                perturbation,
                detector,
                backend,
                kappa,
                reps: recs.len(),
                failures: n_failed,
                power,
                power_se,
                fpr,
                fpr_se,
            }
        })
        .collect()
}

/// Reads the long format written by [`PowerReport::write_long_csv`].
pub fn read_long_csv<R: Read>(r: R) -> Result<Vec<ReplicateRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_aggregate_csv<W: Write>(cells: &[CellSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["perturbation", "detector", "backend", "kappa", "power", "power_se", "fpr", "fpr_se", "reps", "failures"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        out.write_record([
            c.perturbation.name().to_string(),
            c.detector.clone(),
            c.backend.clone(),
            c.kappa.to_string(),
            opt(c.power),
            opt(c.power_se),
            c.fpr.to_string(),
            c.fpr_se.to_string(),
            c.reps.to_string(),
            c.failures.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn score(flags: &IndexSet, n: usize, n_infl: usize) -> (Option<f64>, f64) {
    let hits = flags.iter().filter(|&i| i < n_infl).count();
    let false_pos = flags.len() - hits;
    let power = (n_infl > 0).then(|| hits as f64 / n_infl as f64);
    (power, false_pos as f64 / (n - n_infl) as f64)
}

/// Runs replicates `reps` of `cfg`; replicate `r` always uses the same data
/// and detector seeds, so ranges can be run separately and merged.
pub fn run_replicates(
    cfg: &SimConfig,
    detectors: &[&dyn SimDetector],
    reps: std::ops::Range<usize>,
) -> Result<PowerReport> {
    cfg.validate()?;
    let per_rep: Vec<(Vec<ReplicateRecord>, Vec<FailureRecord>)> = reps
        .into_par_iter()
        .map(|rep| {
            let mut records = Vec::new();
            let mut failures = Vec::new();
            let fail = |detector: String, backend: &str, e: &Error| FailureRecord {
                detector,
                backend: backend.to_string(),
                kappa: cfg.kappa,
                rep,
                error: e.to_string(),
            };
            let data = match replicate(cfg, rep) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("replicate {rep}: data generation failed: {e}");
                    for d in detectors {
                        failures.push(fail(d.label(), NO_BACKEND, &e));
                    }
                    return (records, failures);
                }
            };
            let det_seed = rng::derive_labeled(rng::derive(cfg.seed, rep as u64), "detector", 0);
            for d in detectors {
                match d.detect(&data, det_seed) {
                    Ok(outcomes) => {
                        for (backend, flags) in outcomes {
                            match flags {
                                Ok(f) => {
                                    let (power, fpr) = score(&f, cfg.n, cfg.n_infl);
                                    records.push(ReplicateRecord {
                                        detector: d.label(),
                                        backend,
                                        kappa: cfg.kappa,
                                        rep,
                                        power,
                                        fpr,
                                    });
                                }
                                Err(e) => failures.push(fail(d.label(), &backend, &e)),
                            }
                        }
                    }
                    Err(e) => {
                        log::warn!("replicate {rep}: {} failed: {e}", d.label());
                        failures.push(fail(d.label(), NO_BACKEND, &e));
                    }
                }
            }
            (records, failures)
        })
        .collect();
    let mut report = PowerReport { config: cfg.clone(), records: Vec::new(), failures: Vec::new() };
    for (r, f) in per_rep {
        report.records.extend(r);
        report.failures.extend(f);
    }
    Ok(report)
}

pub fn run_experiment(cfg: &SimConfig, detectors: &[&dyn SimDetector]) -> Result<PowerReport> {
    run_replicates(cfg, detectors, 0..cfg.n_reps)
}

/// One experiment per kappa, merged; the config's own `kappa` is ignored.
pub fn run_kappa_grid(cfg: &SimConfig, kappas: &[f64], detectors: &[&dyn SimDetector]) -> Result<PowerReport> {
    let mut out: Option<PowerReport> = None;
    for &k in kappas {
        let r = run_experiment(&SimConfig { kappa: k, ..cfg.clone() }, detectors)?;
        match &mut out {
            Some(o) => o.merge(r),
            None => out = Some(r),
        }
    }
    out.ok_or_else(|| Error::InvalidParameter("empty kappa grid".into()))
}
