//! Artifact I/O helpers: atomic file writes, stable numeric formatting, and
//! small CSV parsing utilities shared by the CSV-emitting modules.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// Format `x` with `digits` significant digits in scientific notation.
///
/// The representation is locale-independent and stable across runs, so
/// re-running a command with identical inputs rewrites byte-identical files.
pub fn sig(x: f64, digits: usize) -> String {
    debug_assert!(digits >= 1);
    format!("{:.*e}", digits - 1, x)
}

/// Write `content` to `path` atomically: write a sibling temp file, then
/// rename over the destination. Concurrent runs sharing an output directory
/// never observe half-written artifacts.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let display = path.display().to_string();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    fs::write(tmp_path, content).map_err(|e| Error::io(tmp_path.display().to_string(), e))?;
    fs::rename(tmp_path, path).map_err(|e| Error::io(display, e))
}

/// Read a whole file to a string with path context on failure.
pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a headerless CSV of floats into rows. Blank lines are skipped;
/// `path` is used only for error messages.
pub fn parse_float_rows(text: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::parse(
                        path,
                        format!("line {}: `{}` is not a number", lineno + 1, cell.trim()),
                    )
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok(rows)
}
