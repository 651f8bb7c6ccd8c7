//! CSV input and output of datasets and count sequences.
//!
//! Dataset files have one header row; the first column is the response and
//! the remaining columns are predictors.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::datamodel::Task;
use crate::{Dataset, Error, Result};

/// A dataset together with its column names (response first).
#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub data: Dataset,
    pub names: Vec<String>,
}

pub fn read_dataset<R: Read>(r: R, task: Task) -> Result<NamedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.len() < 2 {
        return Err(Error::InvalidInput("need a response column and at least one predictor".into()));
    }
    let width = names.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::DimensionMismatch(format!("row {} has {} fields, header has {width}", k + 1, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidInput(format!("row {}, column `{}`: cannot parse `{field}` as a number", k + 1, names[j]))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let all = Array2::from_shape_vec((rows, width), values).expect("row lengths checked");
    let y: Array1<f64> = all.column(0).to_owned();
    let x = all.slice(ndarray::s![.., 1..]).to_owned();
    Ok(NamedDataset { data: Dataset::new(y, x, task)?, names })
}

/// Writes `y` then the predictors; default names are `y, x1, ..., xp`.
pub fn write_dataset<W: Write>(data: &Dataset, names: Option<&[String]>, w: W) -> Result<()> {
    let header: Vec<String> = match names {
        Some(n) if n.len() == data.p() + 1 => n.to_vec(),
        Some(n) => {
            return Err(Error::DimensionMismatch(format!("{} names for {} columns", n.len(), data.p() + 1)));
        }
        None => std::iter::once("y".to_string()).chain((1..=data.p()).map(|j| format!("x{j}"))).collect(),
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&header)?;
    for i in 0..data.n() {
        let xi = data.x().row(i);
        let row = std::iter::once(data.y()[i]).chain(xi.iter().copied()).map(|v| v.to_string());
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Non-negative integer counts from a CSV file with a header row. Uses the
/// column named `tau` if there is one, otherwise the last column. Empty
/// fields (failed refits) are skipped.
pub fn read_counts<R: Read>(r: R) -> Result<Vec<u32>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::InvalidInput("count file has no columns".into()));
    }
    let col = headers.iter().position(|h| h.eq_ignore_ascii_case("tau")).unwrap_or(headers.len() - 1);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        if field.is_empty() {
            continue;
        }
        let v: u32 = field
            .parse()
            .map_err(|_| Error::InvalidInput(format!("row {}: `{field}` is not a non-negative integer", k + 1)))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}
