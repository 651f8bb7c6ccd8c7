use influens::detection::{
    clusmip_profile, detect_dflasso, detect_him, detect_mip, sweep_profile, Backend, ClusMipConfig, DetectionReport,
    DetectionResult, Detector, MipConfig,
};
use influens::io::read_dataset;
use influens::selectors::SelectorSpec;
use influens::{Dataset, Selector};
use serde::Serialize;

use crate::manifest::{read_input, OutDir};
use crate::settings::{Detect, DetectorKind};
use crate::CliResult;

#[derive(Serialize)]
#[serde(untagged)]
enum Section {
    Ok(Box<DetectionReport>),
    Failed { backend: Backend, error: String },
}

#[derive(Serialize)]
struct MultiReport {
    detector: Detector,
    sections: Vec<Section>,
}

pub fn run(s: &Detect) -> CliResult<()> {
    let (bytes, digest) = read_input(&s.input)?;
    let data = read_dataset(bytes.as_slice(), s.task)?.data;
    let mut out = OutDir::create(&s.out)?;
    match s.detector {
        DetectorKind::ClusMip => clusmip(s, &data, &mut out)?,
        kind => baseline(s, kind, &data, &mut out)?,
    }
    out.finish("detect", Some(s.seed), s, s.config_file.as_deref(), vec![digest])
}

fn print_flags(label: &str, r: &DetectionResult) {
    let list: Vec<String> = r.flagged.one_based().iter().map(usize::to_string).collect();
    println!("{label}: {} flagged [{}]", list.len(), list.join(", "));
}

fn clusmip(s: &Detect, data: &Dataset, out: &mut OutDir) -> CliResult<()> {
    let mut cfg = ClusMipConfig::new(SelectorSpec::new(s.selector), s.alpha, s.seed);
    cfg.retune_per_deletion = s.retune_per_deletion;
    cfg.reference = s.reference;
    cfg.boot_replicates = s.boot_replicates;
    let profile = clusmip_profile(data, &cfg)?;
    out.write("tau.csv", |w| profile.tau.write_csv(w))?;
    if s.dump_xi {
        out.write("xi.csv", |w| profile.xi.write_csv(&profile.tau.indices, w))?;
    }
    if s.dump_reference_tau {
        match &profile.reference_tau {
            Some(r) => out.write("reference_tau.csv", |w| r.write_csv(w))?,
            None => eprintln!("warning: no reference GDF values with --reference candidates; reference_tau.csv not written"),
        }
    }
    let sweep = sweep_profile(data, profile, &cfg, &s.backends)?;
    let detector = Detector::ClusMip(s.selector);

    if let [(_, single)] = sweep.results.as_slice() {
        let r = match single {
            Ok(r) => r,
            Err(_) => return Err(sweep.results.into_iter().next().and_then(|(_, r)| r.err()).expect("failed result").into()),
        };
        print_flags(&format!("{detector} {}", s.backends[0]), r);
        out.write_json("report.json", &r.report())?;
        return out.write("flags.csv", |w| r.write_flags_csv(w));
    }

    let ok: Vec<(Backend, &DetectionResult)> =
        sweep.results.iter().filter_map(|(b, r)| r.as_ref().ok().map(|r| (*b, r))).collect();
    if ok.is_empty() {
        let (_, first) = sweep.results.into_iter().next().expect("at least one backend");
        return Err(first.expect_err("every backend failed").into());
    }
    let sections = sweep
        .results
        .iter()
        .map(|(b, r)| match r {
            Ok(r) => {
                print_flags(&format!("{detector} {b}"), r);
                Section::Ok(Box::new(r.report()))
            }
            Err(e) => {
                eprintln!("warning: {detector} {b} failed: {e}");
                Section::Failed { backend: *b, error: e.to_string() }
            }
        })
        .collect();
    out.write_json("report.json", &MultiReport { detector, sections })?;
    out.write("flags.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend(ok.iter().map(|(b, _)| b.name().to_string()));
        csv.write_record(&header)?;
        for i in 0..data.n() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(ok.iter().map(|(_, r)| u8::from(r.flagged.contains(i)).to_string()));
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn baseline(s: &Detect, kind: DetectorKind, data: &Dataset, out: &mut OutDir) -> CliResult<()> {
    let r = match kind {
        DetectorKind::DfLasso => detect_dflasso(data, &SelectorSpec::new(Selector::Lasso), s.seed)?,
        DetectorKind::Mip => detect_mip(data, &MipConfig { m_subsets: s.mip_subsets, ..MipConfig::new(s.alpha, s.seed) })?,
        DetectorKind::Him => detect_him(data, s.alpha)?,
        DetectorKind::ClusMip => unreachable!("handled by clusmip()"),
    };
    print_flags(&r.detector.to_string(), &r);
    out.write("tau.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let secondary = r.diagnostics.secondary.as_ref();
        let mut header = vec!["index", "statistic"];
        if secondary.is_some() {
            header.push("secondary");
        }
        csv.write_record(&header)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, v) in r.statistic.iter().enumerate() {
            let mut row = vec![(i + 1).to_string(), cell(*v)];
            if let Some(sec) = secondary {
                row.push(cell(sec[i]));
            }
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write_json("report.json", &r.report())?;
    out.write("flags.csv", |w| r.write_flags_csv(w))
}
