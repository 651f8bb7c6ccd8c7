//! Detectors: the clustering-based ClusMIP procedure and the HIM, MIP and
//! DF(LASSO) baselines, with a common result type and JSON report.

mod baselines;
mod clusmip;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::clustering::Partition;
use crate::count_models::CountModelFit;
use crate::thresholds::{ThresholdKind, ThresholdRule};
use crate::{Error, IndexSet, Result, Selector};

pub use baselines::{detect_dflasso, detect_him, detect_mip, him_statistics, MipConfig};
pub use clusmip::{
    backend_threshold, clusmip, clusmip_decide, clusmip_profile, clusmip_sweep, clusmip_with, profile_for_partition, sweep_profile, ClusMipConfig, ClusMipProfile,
    ClusMipSweep, ThresholdReference,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backend {
    Clt,
    ParamCmb,
    ParamCmp,
    ParamBb,
    ParamGp,
    ParamMb,
    ParamMp,
    BootI,
    BootII,
    BootIII,
}

impl Backend {
    pub const ALL: [Backend; 10] = [
        Backend::Clt,
        Backend::ParamCmb,
        Backend::ParamCmp,
        Backend::ParamBb,
        Backend::ParamGp,
        Backend::ParamMb,
        Backend::ParamMp,
        Backend::BootI,
        Backend::BootII,
        Backend::BootIII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Clt => "CLT",
            Backend::ParamCmb => "Param-CMB",
            Backend::ParamCmp => "Param-CMP",
            Backend::ParamBb => "Param-BB",
            Backend::ParamGp => "Param-GP",
            Backend::ParamMb => "Param-MB",
            Backend::ParamMp => "Param-MP",
            Backend::BootI => "Boot-I",
            Backend::BootII => "Boot-II",
            Backend::BootIII => "Boot-III",
        }
    }

    /// Parametric backends fit a count family and need at least 10 values.
    pub fn is_parametric(self) -> bool {
        matches!(
            self,
            Backend::ParamCmb | Backend::ParamCmp | Backend::ParamBb | Backend::ParamGp | Backend::ParamMb | Backend::ParamMp
        )
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        let key = key.strip_prefix("param").unwrap_or(&key);
        Ok(match key {
            "clt" => Backend::Clt,
            "cmb" => Backend::ParamCmb,
            "cmp" => Backend::ParamCmp,
            "bb" => Backend::ParamBb,
            "gp" => Backend::ParamGp,
            "mb" => Backend::ParamMb,
            "mp" => Backend::ParamMp,
            "boot1" | "booti" => Backend::BootI,
            "boot2" | "bootii" => Backend::BootII,
            "boot3" | "bootiii" => Backend::BootIII,
            _ => return Err(Error::InvalidInput(format!("unknown backend `{s}`"))),
        })
    }
}

impl Serialize for Backend {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Backend {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    ClusMip(Selector),
    DfLasso,
    Mip,
    Him,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detector::ClusMip(s) => write!(f, "ClusMIP({})", s.name()),
            Detector::DfLasso => f.write_str("DF(LASSO)"),
            Detector::Mip => f.write_str("MIP"),
            Detector::Him => f.write_str("HIM"),
        }
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        match lower.as_str() {
            "dflasso" | "df(lasso)" | "df-lasso" => return Ok(Detector::DfLasso),
            "mip" => return Ok(Detector::Mip),
            "him" => return Ok(Detector::Him),
            _ => {}
        }
        if let Some(inner) = lower.strip_prefix("clusmip(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Detector::ClusMip(inner.parse()?));
        }
        Err(Error::InvalidInput(format!("unknown detector `{s}`")))
    }
}

impl Serialize for Detector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Detector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Wall-clock seconds per stage.
pub type Timings = BTreeMap<String, f64>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    /// Penalty level used for every refit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Values the threshold was fitted to, when they differ from the
    /// statistics of the tested observations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_values: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count_fit: Option<CountModelFit>,
    /// Secondary per-observation statistic (MIP: `T_min`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub detector: Detector,
    /// Threshold backend (ClusMIP only).
    pub backend: Option<Backend>,
    pub flagged: IndexSet,
    /// One entry per observation; `None` where no statistic was computed
    /// or a refit failed.
    pub statistic: Vec<Option<f64>>,
    pub rule: ThresholdRule,
    pub diagnostics: Diagnostics,
    pub timings: Timings,
}

/// JSON form of a [`DetectionResult`]; indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector: Detector,
    pub backend: Option<Backend>,
    pub flagged: Vec<usize>,
    pub statistics: Vec<Option<f64>>,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_infinity")]
    pub cutoff: f64,
    pub rule: ThresholdKind,
    pub partition: Option<ReportPartition>,
    pub timings: Timings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_fit: Option<CountModelFit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPartition {
    pub s_infl: Vec<usize>,
    pub s_clean: Vec<usize>,
    pub method: crate::clustering::PartitionMethod,
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

impl DetectionResult {
    pub fn report(&self) -> DetectionReport {
        DetectionReport {
            detector: self.detector,
            backend: self.backend,
            flagged: self.flagged.one_based(),
            statistics: self.statistic.clone(),
            cutoff: self.rule.cutoff,
            rule: self.rule.kind.clone(),
            partition: self.diagnostics.partition.as_ref().map(|p| ReportPartition {
                s_infl: p.s_infl.one_based(),
                s_clean: p.s_clean.one_based(),
                method: p.method,
            }),
            timings: self.timings.clone(),
            lambda: self.diagnostics.lambda,
            count_fit: self.diagnostics.count_fit.clone(),
            notes: self.diagnostics.notes.clone(),
        }
    }

    /// `index,flagged` rows (1-based) for every observation.
    pub fn write_flags_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "flagged"])?;
        for i in 0..self.statistic.len() {
            out.write_record([(i + 1).to_string(), u8::from(self.flagged.contains(i)).to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Wall-clock timer that reads zero on `wasm32-unknown-unknown`, where
/// `std::time::Instant` is unavailable.
#[derive(Debug, Clone, Copy)]
struct Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        0.0
    }
}
