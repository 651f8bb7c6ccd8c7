//! Command settings: flags, an optional JSON config file (flags win), and
//! the validated forms the commands run on.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use influens::detection::{Backend, ThresholdReference};
use influens::simharness::{Perturbation, SimConfig};
use influens::{Selector, Task};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError, CliResult};

const DEFAULT_OUT: &str = "influens-out";

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(p) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(p).map_err(io_err(p))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
}

/// Fills every unset flag from the config file.
macro_rules! overlay {
    ($flags:ident, $file:ident; $($opt:ident),* ; $($flag:ident),*) => {
        $( if $flags.$opt.is_none() { $flags.$opt = $file.$opt.take(); } )*
        $( $flags.$flag |= $file.$flag; )*
    };
}

fn parse<T: FromStr<Err = influens::Error>>(s: &str) -> CliResult<T> {
    Ok(s.trim().parse()?)
}

fn parse_list<T: FromStr<Err = influens::Error>>(items: &[String]) -> CliResult<Vec<T>> {
    items.iter().flat_map(|s| s.split(',')).filter(|s| !s.trim().is_empty()).map(parse).collect()
}

pub fn parse_backends(spec: &str) -> CliResult<Vec<Backend>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Backend::ALL.to_vec());
    }
    let list: Vec<Backend> = parse_list(&[spec.to_string()])?;
    if list.is_empty() {
        return Err(CliError::Usage("no backend given".into()));
    }
    Ok(list)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    ClusMip,
    DfLasso,
    Mip,
    Him,
}

impl FromStr for DetectorKind {
    type Err = influens::Error;

    fn from_str(s: &str) -> influens::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clusmip" => Ok(DetectorKind::ClusMip),
            "dflasso" | "df-lasso" | "df" => Ok(DetectorKind::DfLasso),
            "mip" => Ok(DetectorKind::Mip),
            "him" => Ok(DetectorKind::Him),
            _ => Err(influens::Error::InvalidInput(format!("unknown detector `{s}` (clusmip, dflasso, mip, him)"))),
        }
    }
}

fn parse_reference(s: &str) -> CliResult<ThresholdReference> {
    match s.trim().to_ascii_lowercase().as_str() {
        "clean-loo" | "clean-leave-one-out" => Ok(ThresholdReference::CleanLeaveOneOut),
        "candidates" => Ok(ThresholdReference::Candidates),
        _ => Err(CliError::Usage(format!("unknown threshold reference `{s}` (clean-loo, candidates)"))),
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DetectSettings {
    /// JSON file with any of these settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset CSV: response column first, then predictors, one header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// linear or logistic.
    #[arg(long)]
    pub task: Option<String>,
    /// clusmip, dflasso, mip or him.
    #[arg(long)]
    pub detector: Option<String>,
    /// ClusMIP selector: lasso, slasso, scad or mcp.
    #[arg(long)]
    pub selector: Option<String>,
    /// ClusMIP threshold backend(s), comma separated, or `all`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Significance level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to INFLUENS_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Re-run cross-validation for every refit instead of reusing the
    /// reference penalty level.
    #[arg(long)]
    pub retune_per_deletion: bool,
    /// Values the ClusMIP threshold is fitted to: clean-loo or candidates.
    #[arg(long)]
    pub reference: Option<String>,
    /// MIP random subsets.
    #[arg(long)]
    pub mip_subsets: Option<usize>,
    /// Bootstrap replicates for Boot-I/II/III.
    #[arg(long)]
    pub boot_replicates: Option<usize>,
    /// Also write the per-predictor flip matrix (xi.csv).
    #[arg(long)]
    pub dump_xi: bool,
    /// Also write the clean-set leave-one-out GDF values (reference_tau.csv).
    #[arg(long)]
    pub dump_reference_tau: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Detect {
    pub input: PathBuf,
    pub task: Task,
    pub detector: DetectorKind,
    pub selector: Selector,
    pub backends: Vec<Backend>,
    pub alpha: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub retune_per_deletion: bool,
    pub reference: ThresholdReference,
    pub mip_subsets: usize,
    pub boot_replicates: usize,
    pub dump_xi: bool,
    pub dump_reference_tau: bool,
    #[serde(skip)]
    pub config_file: Option<PathBuf>,
}

impl DetectSettings {
    pub fn resolve(mut self) -> CliResult<Detect> {
        let mut file: DetectSettings = load(self.config.as_deref())?;
        overlay!(self, file; input, task, detector, selector, backend, alpha, seed, out, threads, reference, mip_subsets, boot_replicates;
                 retune_per_deletion, dump_xi, dump_reference_tau);
        let input = self.input.ok_or_else(|| CliError::Usage("--input is required".into()))?;
        Ok(Detect {
            input,
            task: parse(self.task.as_deref().unwrap_or("linear"))?,
            detector: parse(self.detector.as_deref().unwrap_or("clusmip"))?,
            selector: parse(self.selector.as_deref().unwrap_or("lasso"))?,
            backends: parse_backends(self.backend.as_deref().unwrap_or("all"))?,
            alpha: self.alpha.unwrap_or(0.05),
            seed: self.seed.unwrap_or(1),
            out: self.out.unwrap_or_else(|| DEFAULT_OUT.into()),
            threads: self.threads,
            retune_per_deletion: self.retune_per_deletion,
            reference: self.reference.as_deref().map(parse_reference).transpose()?.unwrap_or_default(),
            mip_subsets: self.mip_subsets.unwrap_or(100),
            boot_replicates: self.boot_replicates.unwrap_or(influens::bootstrap::DEFAULT_REPLICATES),
            dump_xi: self.dump_xi,
            dump_reference_tau: self.dump_reference_tau,
            config_file: self.config,
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateSettings {
    /// JSON file with any of these settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// linear or logistic.
    #[arg(long)]
    pub task: Option<String>,
    /// Observations per replicate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Predictors.
    #[arg(long)]
    pub p: Option<usize>,
    /// AR(1) correlation of the design.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// I_Y, II_X, III_XY or Logistic_X.
    #[arg(long)]
    pub perturb: Option<String>,
    /// Contamination magnitudes, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub kappa: Option<Vec<f64>>,
    /// Replicates per kappa.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of contaminated rows (the first ones).
    #[arg(long)]
    pub n_infl: Option<usize>,
    /// Number of shifted predictors.
    #[arg(long)]
    pub perturbed_columns: Option<usize>,
    /// Noise standard deviation of the linear model.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Significance level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Detectors, comma separated (clusmip, dflasso, mip, him).
    #[arg(long, value_delimiter = ',')]
    pub detectors: Option<Vec<String>>,
    /// ClusMIP selectors, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub selectors: Option<Vec<String>>,
    /// ClusMIP backends, comma separated, or `all`.
    #[arg(long)]
    pub backends: Option<String>,
    /// MIP random subsets.
    #[arg(long)]
    pub mip_subsets: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to INFLUENS_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulate {
    pub config: SimConfig,
    pub kappas: Vec<f64>,
    pub alpha: f64,
    pub detectors: Vec<DetectorKind>,
    pub selectors: Vec<Selector>,
    pub backends: Vec<Backend>,
    pub mip_subsets: usize,
    pub out: PathBuf,
    pub threads: Option<usize>,
    #[serde(skip)]
    pub config_file: Option<PathBuf>,
}

impl SimulateSettings {
    pub fn resolve(mut self) -> CliResult<Simulate> {
        let mut file: SimulateSettings = load(self.config.as_deref())?;
        overlay!(self, file; task, n, p, rho, perturb, kappa, reps, seed, n_infl, perturbed_columns, sigma, alpha, detectors,
                 selectors, backends, mip_subsets, out, threads; );
        let task: Task = parse(self.task.as_deref().unwrap_or("linear"))?;
        let perturbation: Perturbation = match &self.perturb {
            Some(s) => parse(s)?,
            None if task == Task::Logistic => Perturbation::LogisticX,
            None => Perturbation::IY,
        };
        let kappas = self.kappa.unwrap_or_else(|| vec![5.0, 10.0, 30.0]);
        let Some(&first) = kappas.first() else { return Err(CliError::Usage("--kappa needs at least one value".into())) };
        let desk = SimConfig::desk(task, self.rho.unwrap_or(0.5), perturbation, first, self.seed.unwrap_or(1));
        let config = SimConfig {
            n: self.n.unwrap_or(desk.n),
            p: self.p.unwrap_or(desk.p),
            n_infl: self.n_infl.unwrap_or(desk.n_infl),
            n_reps: self.reps.unwrap_or(desk.n_reps),
            perturbed_columns: self.perturbed_columns.unwrap_or(desk.perturbed_columns),
            sigma: self.sigma.unwrap_or(desk.sigma),
            ..desk
        };
        config.validate()?;
        let default_detectors: &[&str] =
            if task == Task::Linear { &["clusmip", "dflasso", "mip"] } else { &["clusmip", "dflasso"] };
        let detectors: Vec<DetectorKind> =
            parse_list(&self.detectors.unwrap_or_else(|| default_detectors.iter().map(|s| s.to_string()).collect()))?;
        if task == Task::Logistic && detectors.iter().any(|d| matches!(d, DetectorKind::Mip | DetectorKind::Him)) {
            return Err(CliError::Usage("MIP and HIM are defined for the linear model only".into()));
        }
        let default_selectors: &[&str] =
            if task == Task::Linear { &["lasso", "slasso", "scad", "mcp"] } else { &["lasso", "scad", "mcp"] };
        let selectors: Vec<Selector> =
            parse_list(&self.selectors.unwrap_or_else(|| default_selectors.iter().map(|s| s.to_string()).collect()))?;
        if task == Task::Logistic && selectors.contains(&Selector::ScaledLasso) {
            return Err(CliError::Usage("the scaled LASSO is only available for the linear model".into()));
        }
        Ok(Simulate {
            config,
            kappas,
            alpha: self.alpha.unwrap_or(0.05),
            detectors,
            selectors,
            backends: parse_backends(self.backends.as_deref().unwrap_or("all"))?,
            mip_subsets: self.mip_subsets.unwrap_or(100),
            out: self.out.unwrap_or_else(|| DEFAULT_OUT.into()),
            threads: self.threads,
            config_file: self.config,
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitDistSettings {
    /// JSON file with any of these settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CSV of counts: the `tau` column, or the last column.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// cmb, cmp, bb, gp, mb or mp.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of trials of the bounded families (usually p).
    #[arg(long)]
    pub trials: Option<u32>,
    /// The reported cutoff is the mid-quantile at 1 - alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Largest mixture order tried.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to INFLUENS_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDist {
    pub input: PathBuf,
    pub family: Backend,
    pub trials: Option<u32>,
    pub alpha: f64,
    pub k_max: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    #[serde(skip)]
    pub config_file: Option<PathBuf>,
}

impl FitDistSettings {
    pub fn resolve(mut self) -> CliResult<FitDist> {
        let mut file: FitDistSettings = load(self.config.as_deref())?;
        overlay!(self, file; input, family, trials, alpha, k_max, seed, out, threads; );
        let input = self.input.ok_or_else(|| CliError::Usage("--input is required".into()))?;
        let name = self.family.ok_or_else(|| CliError::Usage("--family is required (cmb, cmp, bb, gp, mb, mp)".into()))?;
        let family: Backend = parse(&name)?;
        if !family.is_parametric() {
            return Err(CliError::Usage(format!("`{name}` is not a count family (cmb, cmp, bb, gp, mb, mp)")));
        }
        let bounded = matches!(family, Backend::ParamCmb | Backend::ParamBb | Backend::ParamMb);
        if bounded && self.trials.is_none() {
            return Err(CliError::Usage(format!("{family} needs --trials")));
        }
        Ok(FitDist {
            input,
            family,
            trials: self.trials,
            alpha: self.alpha.unwrap_or(0.05),
            k_max: self.k_max.unwrap_or(3),
            seed: self.seed.unwrap_or(1),
            out: self.out.unwrap_or_else(|| DEFAULT_OUT.into()),
            threads: self.threads,
            config_file: self.config,
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportSettings {
    /// JSON file with any of these settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// `simulate` output directories, or long-format CSV files.
    pub inputs: Vec<PathBuf>,
    /// Perturbation label for CSV inputs (directories carry their own).
    #[arg(long)]
    pub perturb: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to INFLUENS_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub inputs: Vec<PathBuf>,
    pub perturbation: Option<Perturbation>,
    pub out: PathBuf,
    pub threads: Option<usize>,
    #[serde(skip)]
    pub config_file: Option<PathBuf>,
}

impl ReportSettings {
    pub fn resolve(mut self) -> CliResult<Report> {
        let mut file: ReportSettings = load(self.config.as_deref())?;
        overlay!(self, file; perturb, out, threads; );
        if self.inputs.is_empty() {
            self.inputs = file.inputs;
        }
        if self.inputs.is_empty() {
            return Err(CliError::Usage("no inputs given".into()));
        }
        Ok(Report {
            inputs: self.inputs,
            perturbation: self.perturb.as_deref().map(parse).transpose()?,
            out: self.out.unwrap_or_else(|| DEFAULT_OUT.into()),
            threads: self.threads,
            config_file: self.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"input": "a.csv", "alpha": 0.1, "selector": "scad", "dump-xi": true}"#).unwrap();
        let s = DetectSettings { config: Some(cfg), alpha: Some(0.01), ..Default::default() }.resolve().unwrap();
        assert_eq!(s.input, PathBuf::from("a.csv"));
        assert_eq!(s.alpha, 0.01);
        assert_eq!(s.selector, Selector::Scad);
        assert!(s.dump_xi);
        assert_eq!(s.backends, Backend::ALL.to_vec());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"alhpa": 0.1}"#).unwrap();
        let err = DetectSettings { config: Some(cfg), ..Default::default() }.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn backend_lists() {
        assert_eq!(parse_backends("boot1,clt").unwrap(), vec![Backend::BootI, Backend::Clt]);
        assert_eq!(parse_backends("ALL").unwrap().len(), 10);
        assert!(parse_backends("boot4").is_err());
    }

    #[test]
    fn simulate_validation() {
        let bad = SimulateSettings { rho: Some(1.5), ..Default::default() }.resolve().unwrap_err();
        assert_eq!(bad.exit_code(), 2);
        let s = SimulateSettings { task: Some("logistic".into()), ..Default::default() }.resolve().unwrap();
        assert_eq!(s.config.perturbation, Perturbation::LogisticX);
        assert_eq!((s.config.n, s.config.p), (100, 200));
        assert_eq!(s.detectors, vec![DetectorKind::ClusMip, DetectorKind::DfLasso]);
        let mip = SimulateSettings { task: Some("logistic".into()), detectors: Some(vec!["mip".into()]), ..Default::default() };
        assert!(mip.resolve().is_err());
    }
}
