use influens::detection::MipConfig;
use influens::simharness::{
    run_kappa_grid, ClusMipDetector, DfLassoDetector, FailureRecord, HimDetector, MipDetector, PowerReport, SimDetector,
};
use serde::Serialize;

use crate::manifest::OutDir;
use crate::settings::{DetectorKind, Simulate};
use crate::CliResult;

#[derive(Serialize)]
struct Summary<'a> {
    settings: &'a Simulate,
    cells: Vec<influens::simharness::CellSummary>,
    failures: &'a [FailureRecord],
}

pub fn run(s: &Simulate) -> CliResult<()> {
    let clusmip: Vec<ClusMipDetector> = if s.detectors.contains(&DetectorKind::ClusMip) {
        s.selectors.iter().map(|&sel| ClusMipDetector::new(sel, s.alpha, &s.backends)).collect()
    } else {
        Vec::new()
    };
    let df = DfLassoDetector;
    let mip = MipDetector(MipConfig { m_subsets: s.mip_subsets, ..MipConfig::new(s.alpha, 0) });
    let him = HimDetector(s.alpha);
    let mut detectors: Vec<&dyn SimDetector> = Vec::new();
    for kind in &s.detectors {
        match kind {
            DetectorKind::ClusMip => detectors.extend(clusmip.iter().map(|d| d as &dyn SimDetector)),
            DetectorKind::DfLasso => detectors.push(&df),
            DetectorKind::Mip => detectors.push(&mip),
            DetectorKind::Him => detectors.push(&him),
        }
    }

    let report: PowerReport = run_kappa_grid(&s.config, &s.kappas, &detectors)?;
    if !report.failures.is_empty() {
        eprintln!("warning: {} detector runs failed; see summary.json", report.failures.len());
    }
    let mut out = OutDir::create(&s.out)?;
    out.write("long.csv", |w| report.write_long_csv(w))?;
    out.write("aggregate.csv", |w| report.write_aggregate_csv(w))?;
    let cells = report.summary();
    for c in &cells {
        let power = c.power.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into());
        println!("{} {} {} kappa={}: power {power} fpr {:.3} ({} reps)", c.perturbation, c.detector, c.backend, c.kappa, c.fpr, c.reps);
    }
    out.write_json("summary.json", &Summary { settings: s, cells, failures: &report.failures })?;
    out.finish("simulate", Some(s.config.seed), s, s.config_file.as_deref(), Vec::new())
}
