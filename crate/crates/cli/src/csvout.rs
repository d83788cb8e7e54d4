//! CSV writing with a provenance comment line.

use std::fmt::Write as _;
use std::path::Path;

use crate::cache::write_atomic;
use crate::error::CliError;

pub use nearlin_core::netflow::fmt17;

pub fn header_comment(config_hash: &str) -> String {
    format!("# nearlin {} config {config_hash}", env!("CARGO_PKG_VERSION"))
}

pub fn write_csv(path: &Path, config_hash: &str, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut out = String::new();
    writeln!(out, "{}", header_comment(config_hash)).expect("string write");
    writeln!(out, "{header}").expect("string write");
    for r in rows {
        writeln!(out, "{r}").expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

/// Optional values print as empty fields.
pub fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

/// Parses the data rows of a file written by [`write_csv`].
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| CliError::Compute(format!("{} has no header", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}
