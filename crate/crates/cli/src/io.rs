//! Files in and out: spec JSON, numeric CSV, atomic writes.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so a
//! value read back parses to the identical `f64`.

use std::io::Write;
use std::path::Path;

use lvm_core::zoo::ModelSpec;
use lvm_core::{LvmError, Matrix};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_spec(path: &Path) -> CliResult<ModelSpec> {
    let text = read_text(path)?;
    ModelSpec::from_json(&text).map_err(|e| match e {
        LvmError::InvalidSpec { field, reason } => {
            CliError::input(format!("{}: invalid spec at `{field}`: {reason}", path.display()))
        }
        other => CliError::Model(other),
    })
}

/// Write `bytes` to a temporary file beside `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

/// `y` for a single column, otherwise `y1..yP`.
pub fn column_names(p: usize) -> Vec<String> {
    if p == 1 {
        vec!["y".to_string()]
    } else {
        (1..=p).map(|j| format!("y{j}")).collect()
    }
}

pub fn matrix_to_csv(data: &Matrix, header: &[String]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    let mut row = Vec::with_capacity(data.ncols());
    for i in 0..data.nrows() {
        row.clear();
        row.extend(data.row(i).iter().map(|x| x.to_string()));
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Parse a numeric CSV with a header row into an `N x P` matrix.
pub fn csv_to_matrix(text: &str, origin: &str) -> CliResult<(Vec<String>, Matrix)> {
    if text.trim().is_empty() {
        return Err(CliError::input(format!("{origin}: empty file")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("{origin}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => CliError::input(format!(
                "{origin}: row {row} (line {}) has {len} fields, expected {p}",
                row + 1
            )),
            _ => CliError::input(format!("{origin}: row {row}: {e}")),
        })?;
        for (j, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => values.push(x),
                _ => {
                    return Err(CliError::input(format!(
                        "{origin}: row {row} (line {}), column {} (`{}`): `{cell}` is not a finite number",
                        row + 1,
                        j + 1,
                        header[j]
                    )))
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::input(format!("{origin}: no data rows")));
    }
    Ok((header, Matrix::from_row_slice(rows, p, &values)))
}

pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Matrix)> {
    csv_to_matrix(&read_text(path)?, &path.display().to_string())
}
