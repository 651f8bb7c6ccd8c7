use std::path::Path;

use influens::simharness::{read_long_csv, summarize, write_aggregate_csv, CellSummary, Perturbation};
use influens::Error;

use crate::manifest::{read_input, FileDigest, OutDir};
use crate::settings::Report;
use crate::{CliError, CliResult};

/// Perturbation recorded in a `simulate` output directory.
fn directory_perturbation(dir: &Path) -> CliResult<Perturbation> {
    let path = dir.join("summary.json");
    let (bytes, _) = read_input(&path)?;
    let doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(Error::from)?;
    let label = doc
        .pointer("/settings/config/perturbation")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Usage(format!("{}: no perturbation recorded", path.display())))?;
    Ok(label.parse()?)
}

pub fn run(s: &Report) -> CliResult<()> {
    let mut cells: Vec<CellSummary> = Vec::new();
    let mut digests: Vec<FileDigest> = Vec::new();
    for input in &s.inputs {
        let (csv_path, pert) = if input.is_dir() {
            (input.join("long.csv"), directory_perturbation(input)?)
        } else {
            let pert = s
                .perturbation
                .ok_or_else(|| CliError::Usage(format!("{}: --perturb is required for CSV inputs", input.display())))?;
            (input.clone(), pert)
        };
        let (bytes, digest) = read_input(&csv_path)?;
        let records = read_long_csv(bytes.as_slice())?;
        if records.is_empty() {
            return Err(CliError::Usage(format!("{}: no records", csv_path.display())));
        }
        cells.extend(summarize(pert, &records, &[]));
        digests.push(digest);
    }
    let mut out = OutDir::create(&s.out)?;
    out.write("aggregate.csv", |w| write_aggregate_csv(&cells, w))?;
    println!("{} cells from {} inputs", cells.len(), s.inputs.len());
    out.finish("report", None, s, s.config_file.as_deref(), digests)
}
