//! CSV input and plain-text output.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::CliError;

/// Reads the `y` column of a headed CSV file.
pub fn read_series(path: &Path) -> Result<Vec<f64>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?
        .clone();
    let column = headers.iter().position(|h| h == "y").ok_or_else(|| {
        CliError::Invalid(format!("{}: header has no 'y' column", path.display()))
    })?;
    let mut ys = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let line = i + 2;
        let raw = record.get(column).unwrap_or("");
        let y: f64 = raw.parse().map_err(|_| {
            CliError::Invalid(format!(
                "{}:{line}: non-numeric y value '{raw}'",
                path.display()
            ))
        })?;
        if !y.is_finite() {
            return Err(CliError::Invalid(format!(
                "{}:{line}: non-finite y value '{raw}'",
                path.display()
            )));
        }
        ys.push(y);
    }
    if ys.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: no observations",
            path.display()
        )));
    }
    Ok(ys)
}

/// Shortest round-tripping representation, in exponent form outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Accumulates CSV rows in memory so a failed run writes nothing.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Table { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn line(&mut self, line: &str) {
        self.text.push_str(line);
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("standard output: {e}")))
        }
    }
}
