//! CSV/JSON helpers for matrices and bundles.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Write a matrix as header-less CSV, one row per line.
pub fn write_matrix_csv<S: Real>(path: &Path, m: &DMatrix<S>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        wtr.write_record(m.row(i).iter().map(|v| format!("{:e}", to_f64(*v))))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<S: Real>(path: &Path) -> Result<DMatrix<S>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Contract(format!("{}: bad number {s:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Contract(format!("{}: ragged matrix", path.display())));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| lit(rows[i][j])))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
