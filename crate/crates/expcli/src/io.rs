//! Plain-text matrix and tensor files.
//!
//! Matrix: a header line `rows cols`, then one whitespace-separated row per
//! line. Tensor: a header `order d₁ … d_k`, then the row-major values, any
//! number per line. Values are written with 17 significant digits, which
//! round-trips every finite f64 exactly. Lines starting with `#` are
//! comments and may appear anywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use smoothed::DenseTensor;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse {token:?} as a number")]
    Parse { line: usize, token: String },
    #[error("size mismatch: header promises {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_row(line: usize, text: &str) -> Result<Vec<f64>, FormatError> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| FormatError::Parse {
                line,
                token: t.to_string(),
            })
        })
        .collect()
}

fn parse_dims(line: usize, text: &str) -> Result<Vec<usize>, FormatError> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| FormatError::MalformedHeader(format!("line {line}: {text:?}")))
        })
        .collect()
}

fn fmt_value(out: &mut String, x: f64) {
    // {:.16e} keeps 17 significant digits.
    let _ = write!(out, "{x:.16e}");
}

pub fn format_matrix(m: &DMatrix<f64>, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            fmt_value(&mut out, *x);
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, FormatError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| FormatError::MalformedHeader("empty input".into()))?;
    let dims = parse_dims(hl, header)?;
    let [rows, cols] = dims[..] else {
        return Err(FormatError::MalformedHeader(format!("expected `rows cols`, got {header:?}")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (line, text) in lines {
        let row = parse_row(line, text)?;
        if row.len() != cols {
            return Err(FormatError::RowLength {
                line,
                expected: cols,
                found: row.len(),
            });
        }
        data.extend(row);
        seen += 1;
    }
    if seen != rows {
        return Err(FormatError::SizeMismatch {
            expected: rows * cols,
            found: seen * cols,
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn format_tensor(t: &DenseTensor, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = write!(out, "{}", t.order());
    for d in t.shape() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let last = t.shape().last().copied().unwrap_or(1).max(1);
    for chunk in t.data().chunks(last) {
        for (j, x) in chunk.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            fmt_value(&mut out, *x);
        }
        out.push('\n');
    }
    out
}

pub fn parse_tensor(text: &str) -> Result<DenseTensor, FormatError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| FormatError::MalformedHeader("empty input".into()))?;
    let dims = parse_dims(hl, header)?;
    let (&order, shape) = dims
        .split_first()
        .ok_or_else(|| FormatError::MalformedHeader("missing order".into()))?;
    if order == 0 || shape.len() != order {
        return Err(FormatError::MalformedHeader(format!(
            "order {order} does not match {} dimensions",
            shape.len()
        )));
    }
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::MalformedHeader("size overflows".into()))?;
    let mut data = Vec::with_capacity(expected);
    for (line, text) in lines {
        data.extend(parse_row(line, text)?);
    }
    if data.len() != expected {
        return Err(FormatError::SizeMismatch {
            expected,
            found: data.len(),
        });
    }
    DenseTensor::new(shape.to_vec(), data).map_err(|e| FormatError::MalformedHeader(e.to_string()))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, FormatError> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, comments: &[String]) -> Result<(), FormatError> {
    Ok(fs::write(path, format_matrix(m, comments))?)
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor, FormatError> {
    parse_tensor(&fs::read_to_string(path)?)
}

pub fn write_tensor(path: &Path, t: &DenseTensor, comments: &[String]) -> Result<(), FormatError> {
    Ok(fs::write(path, format_tensor(t, comments))?)
}
