//! Numeric matrices as CSV with a header row.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle is lossless and reruns produce identical bytes.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_matrix(path: impl AsRef<Path>, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::Shape(format!(
            "{} header names for a matrix with {} columns",
            header.len(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let mut row = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|j| format!("{}", m[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names `prefix0, prefix1, …`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Reads a header row plus a rectangular block of numbers.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let parse_err = |message: String| Error::Parse {
        path: shown.clone(),
        message,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let ncols = header.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (i, rec) in r.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(format!("line {line}: {e}")))?;
        if rec.len() != ncols {
            return Err(parse_err(format!("line {line}: expected {ncols} fields, found {}", rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("line {line}, column {}: cannot parse {field:?} as a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("line {line}, column {}: non-finite value", j + 1)));
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok((header, DMatrix::from_row_slice(nrows, ncols, &values)))
}
