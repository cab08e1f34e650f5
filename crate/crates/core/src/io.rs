//! Plain-text matrices: one row per line, whitespace-separated reals.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("line {}: bad number '{tok}'", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Config(format!(
                    "line {}: expected {w} columns, found {}",
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let rows = parse_matrix(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

/// Shortest round-trip representation of every entry.
pub fn format_matrix(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    fs::write(path, format_matrix(rows))?;
    Ok(())
}
