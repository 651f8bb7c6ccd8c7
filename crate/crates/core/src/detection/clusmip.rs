//! ClusMIP: split the data into candidates and a clean base, then test each
//! candidate joined to the clean base by its GDF value.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Stopwatch, Backend, DetectionResult, Detector, Diagnostics, Timings};
use crate::bootstrap::{boot1_mean_upper, boot2_quantile, boot3_midquantile, BootstrapConfig, DEFAULT_REPLICATES};
use crate::clustering::{spectral_partition, Partition};
use crate::count_models::{fit_mle, select_order, CountModelFit, FamilyKind, MixtureKind};
use crate::datamodel::Task;
use crate::influence::{GdfEngine, GdfMode, GdfOptions, TauSequence, XiMatrix};
use crate::selectors::SelectorSpec;
use crate::thresholds::{check_level, clt_threshold, parametric_threshold, ThresholdKind, ThresholdRule};
use crate::{rng, Dataset, Error, IndexSet, Result, Selector};

/// Values the second-stage threshold is fitted to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdReference {
    /// Leave-one-out GDF values of the clean observations against the
    /// clean-set fit: the single-point scheme run on the clean base.
    #[default]
    CleanLeaveOneOut,
    /// The candidates' own GDF values.
    Candidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusMipConfig {
    pub spec: SelectorSpec,
    /// Upper-tail level; quantile-type backends use `1 - alpha`.
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub retune_per_deletion: bool,
    #[serde(default)]
    pub reference: ThresholdReference,
    pub boot_replicates: usize,
    /// Boot-II/III subsample size; `None` is `ceil(n^(2/3))`.
    pub boot_m: Option<usize>,
    /// Largest mixture order tried by Param-MB / Param-MP.
    pub mixture_k_max: usize,
}

impl ClusMipConfig {
    pub fn new(spec: SelectorSpec, alpha: f64, seed: u64) -> Self {
        ClusMipConfig {
            spec,
            alpha,
            seed,
            retune_per_deletion: false,
            reference: ThresholdReference::default(),
            boot_replicates: DEFAULT_REPLICATES,
            boot_m: None,
            mixture_k_max: 3,
        }
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        check_level("alpha", self.alpha)?;
        self.spec.validate()?;
        if data.task() == Task::Logistic && self.spec.selector == Selector::ScaledLasso {
            return Err(Error::InvalidParameter("logistic ClusMIP supports LASSO, SCAD and MCP".into()));
        }
        if self.mixture_k_max == 0 {
            return Err(Error::InvalidParameter("mixture_k_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a backend needs: computed once and shared by all backends.
#[derive(Debug, Clone)]
pub struct ClusMipProfile {
    pub partition: Partition,
    /// GDF of each candidate added to the clean base.
    pub tau: TauSequence,
    pub xi: XiMatrix,
    /// Leave-one-out GDF within the clean base
    /// ([`ThresholdReference::CleanLeaveOneOut`] only).
    pub reference_tau: Option<TauSequence>,
    pub lambda: f64,
    pub timings: Timings,
    reference: ThresholdReference,
}

impl ClusMipProfile {
    /// Values the threshold is fitted to.
    pub fn threshold_values(&self) -> Vec<u32> {
        match (&self.reference, &self.reference_tau) {
            (ThresholdReference::CleanLeaveOneOut, Some(r)) => r.observed(),
            _ => self.tau.observed(),
        }
    }
}

/// Partition and GDF values for ClusMIP.
pub fn clusmip_profile(data: &Dataset, cfg: &ClusMipConfig) -> Result<ClusMipProfile> {
    cfg.validate(data)?;
    let t = Stopwatch::start();
    let partition = spectral_partition(data, rng::derive_labeled(cfg.seed, "partition", 0))?;
    let clustering = t.seconds();
    let mut profile = profile_for_partition(data, cfg, partition)?;
    profile.timings.insert("clustering".into(), clustering);
    Ok(profile)
}

/// GDF values for a given partition (skips the clustering stage).
pub fn profile_for_partition(data: &Dataset, cfg: &ClusMipConfig, partition: Partition) -> Result<ClusMipProfile> {
    cfg.validate(data)?;
    if partition.s_infl.len() + partition.s_clean.len() != data.n() {
        return Err(Error::DimensionMismatch("partition does not cover the dataset".into()));
    }
    let mut timings = Timings::new();

    let t = Stopwatch::start();
    let opts = GdfOptions { retune_per_deletion: cfg.retune_per_deletion, seed: rng::derive_labeled(cfg.seed, "cv", 0) };
    let engine = GdfEngine::new(data, &cfg.spec, partition.s_clean.clone(), opts)?;
    let (tau, xi) = engine.profile(&partition.s_infl, GdfMode::Augment)?;
    let reference_tau = match cfg.reference {
        ThresholdReference::CleanLeaveOneOut => Some(engine.profile(&partition.s_clean, GdfMode::LeaveOneOut)?.0),
        ThresholdReference::Candidates => None,
    };
    timings.insert("gdf".into(), t.seconds());
    Ok(ClusMipProfile { lambda: engine.lambda(), partition, tau, xi, reference_tau, timings, reference: cfg.reference })
}

/// Cutoff of one backend fitted to `values`; `trials` bounds the support of
/// the binomial-type families.
pub fn backend_threshold(
    backend: Backend,
    values: &[u32],
    trials: u32,
    cfg: &ClusMipConfig,
) -> Result<(ThresholdRule, Option<CountModelFit>)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().all(|&v| v == 0) {
        return Ok((ThresholdRule { kind: ThresholdKind::PointMassAtZero, cutoff: 0.0 }, None));
    }
    if backend.is_parametric() && values.len() < 10 {
        return Err(Error::InvalidInput(format!("{backend} needs at least 10 values, got {}", values.len())));
    }
    let seed = rng::derive_labeled(cfg.seed, "threshold", backend as u64);
    let zeta = 1.0 - cfg.alpha;
    let boot = |level| BootstrapConfig { b: cfg.boot_replicates, m: cfg.boot_m, level, seed };
    let parametric = |fit: CountModelFit| parametric_threshold(&fit, zeta).map(|r| (r, Some(fit)));
    match backend {
        Backend::Clt => Ok((clt_threshold(values, cfg.alpha)?, None)),
        Backend::ParamCmb => parametric(fit_mle(values, FamilyKind::Cmb, trials)?),
        Backend::ParamCmp => parametric(fit_mle(values, FamilyKind::Cmp, trials)?),
        Backend::ParamBb => parametric(fit_mle(values, FamilyKind::BetaBinomial, trials)?),
        Backend::ParamGp => parametric(fit_mle(values, FamilyKind::GenPoisson, trials)?),
        Backend::ParamMb => parametric(select_order(values, MixtureKind::BinomMix, trials, cfg.mixture_k_max, seed)?.fit),
        Backend::ParamMp => parametric(select_order(values, MixtureKind::PoisMix, trials, cfg.mixture_k_max, seed)?.fit),
        Backend::BootI => Ok((boot1_mean_upper(values, &boot(cfg.alpha))?, None)),
        Backend::BootII => Ok((boot2_quantile(values, &boot(zeta))?, None)),
        Backend::BootIII => Ok((boot3_midquantile(values, &boot(zeta))?, None)),
    }
}

fn decide(data: &Dataset, profile: &ClusMipProfile, backend: Backend, cfg: &ClusMipConfig) -> Result<DetectionResult> {
    let t = Stopwatch::start();
    let n = data.n();
    let mut notes = Vec::new();
    if profile.tau.missing() > 0 {
        notes.push(format!("{} candidate refits failed", profile.tau.missing()));
    }
    let values = profile.threshold_values();
    let candidate_values = profile.tau.observed();
    let (rule, count_fit) = if candidate_values.iter().all(|&v| v == 0) {
        notes.push("every candidate GDF value is zero; nothing flagged".into());
        (ThresholdRule { kind: ThresholdKind::PointMassAtZero, cutoff: 0.0 }, None)
    } else {
        backend_threshold(backend, &values, data.p() as u32, cfg)?
    };
    if rule.kind == ThresholdKind::PointMassAtZero && cfg.reference == ThresholdReference::CleanLeaveOneOut {
        notes.push("reference GDF values are all zero; cutoff is 0".into());
    }
    let mut statistic = vec![None; n];
    let mut flagged = Vec::new();
    for (&i, v) in profile.tau.indices.as_slice().iter().zip(&profile.tau.values) {
        if let Some(v) = *v {
            statistic[i] = Some(v as f64);
            if rule.flags(v as f64) {
                flagged.push(i);
            }
        }
    }
    let mut timings = profile.timings.clone();
    timings.insert("threshold".into(), t.seconds());
    Ok(DetectionResult {
        detector: Detector::ClusMip(cfg.spec.selector),
        backend: Some(backend),
        flagged: IndexSet::new(flagged, n)?,
        statistic,
        rule,
        diagnostics: Diagnostics {
            partition: Some(profile.partition.clone()),
            lambda: Some(profile.lambda),
            reference_values: profile.reference_tau.as_ref().map(|_| values),
            count_fit,
            secondary: None,
            notes,
        },
        timings,
    })
}

/// ClusMIP with default settings for one backend.
pub fn clusmip(data: &Dataset, spec: &SelectorSpec, backend: Backend, alpha: f64, seed: u64) -> Result<DetectionResult> {
    clusmip_with(data, &ClusMipConfig::new(spec.clone(), alpha, seed), backend)
}

pub fn clusmip_with(data: &Dataset, cfg: &ClusMipConfig, backend: Backend) -> Result<DetectionResult> {
    let profile = clusmip_profile(data, cfg)?;
    decide(data, &profile, backend, cfg)
}

/// Second stage for one backend on a precomputed profile.
pub fn clusmip_decide(data: &Dataset, profile: &ClusMipProfile, backend: Backend, cfg: &ClusMipConfig) -> Result<DetectionResult> {
    decide(data, profile, backend, cfg)
}

#[derive(Debug)]
pub struct ClusMipSweep {
    pub profile: ClusMipProfile,
    /// One entry per requested backend, in request order. A failing backend
    /// does not affect the others.
    pub results: Vec<(Backend, Result<DetectionResult>)>,
}

/// Runs several backends on one shared profile.
pub fn clusmip_sweep(data: &Dataset, cfg: &ClusMipConfig, backends: &[Backend]) -> Result<ClusMipSweep> {
    sweep_profile(data, clusmip_profile(data, cfg)?, cfg, backends)
}

/// All requested backends on a precomputed profile.
pub fn sweep_profile(data: &Dataset, profile: ClusMipProfile, cfg: &ClusMipConfig, backends: &[Backend]) -> Result<ClusMipSweep> {
    let results = backends
        .par_iter()
        .map(|&b| {
            let r = decide(data, &profile, b, cfg);
            if let Err(e) = &r {
                log::warn!("backend {b} failed: {e}");
            }
            (b, r)
        })
        .collect();
    Ok(ClusMipSweep { profile, results })
}
