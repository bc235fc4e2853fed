//! CSV matrix input and output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mica_core::experiment::fmt_float;
use nalgebra::DMatrix;

use crate::CliError;

/// Read a numeric CSV with a header row into a matrix (rows = records).
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols {
            return Err(CliError::usage(format!(
                "{} line {line}: expected {cols} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::usage(format!(
                    "{} line {line}, column {}: '{field}' is not a number",
                    path.display(),
                    k + 1
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::usage(format!("{}: no data rows", path.display())));
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &values)))
}

pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    let header: Vec<String> = (1..=m.ncols()).map(|k| format!("{prefix}{k}")).collect();
    let io = |e: std::io::Error| CliError::usage(format!("{}: {e}", path.display()));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}
