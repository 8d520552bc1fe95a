//! Plain-text matrix files.
//!
//! Line 1 holds `d m`, followed by `d` lines of `m` numbers separated by
//! spaces. Lines starting with `#` are comments. Values are written with 17
//! significant digits so a save/load cycle is lossless.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nlra_core::DenseMatrix;

use crate::error::CliError;

pub fn parse_matrix(text: &str) -> Result<DenseMatrix, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| CliError::Input("matrix file is empty".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (rows, cols) = match dims.as_slice() {
        [d, m] => match (parse_dim(d), parse_dim(m)) {
            (Some(d), Some(m)) => (d, m),
            _ => return Err(CliError::Input(format!("line {header_line}: bad header {header:?}"))),
        },
        _ => {
            return Err(CliError::Input(format!(
                "line {header_line}: header must be \"d m\", found {header:?}"
            )))
        }
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut row = 0;
    for (line_no, line) in lines {
        row += 1;
        if row > rows {
            return Err(CliError::Input(format!(
                "line {line_no}: more than the {rows} rows declared in the header"
            )));
        }
        let before = data.len();
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| {
                CliError::Input(format!("row {row} (line {line_no}): cannot parse {token:?}"))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "row {row} (line {line_no}): non-finite value {token:?}"
                )));
            }
            data.push(v);
        }
        let found = data.len() - before;
        if found != cols {
            return Err(CliError::Input(format!(
                "row {row} (line {line_no}): expected {cols} values, found {found}"
            )));
        }
    }
    if row != rows {
        return Err(CliError::Input(format!(
            "expected {rows} rows, found {row}"
        )));
    }
    Ok(DenseMatrix::new(rows, cols, data)?)
}

pub fn format_matrix(m: &DenseMatrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    parse_matrix(&text).map_err(|e| match e {
        CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::io(path.display().to_string(), e);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents.as_bytes()).map_err(err)?;
    tmp.flush().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<(), CliError> {
    write_atomic(path, &format_matrix(m))
}
