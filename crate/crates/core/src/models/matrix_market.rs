use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

use super::{LtiSystem, TimeKind};

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Pattern,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

/// Read a dense matrix from a Matrix Market file (array or coordinate;
/// real, integer or pattern; general, symmetric or skew-symmetric).
pub fn read_matrix_market(path: &Path) -> Result<DenseMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse(&text).map_err(|(line, msg)| Error::Format {
        path: path.display().to_string(),
        line,
        msg,
    })
}

/// Continuous-time system from Matrix Market files for `A`, optional `B` and `C`.
pub fn load_lti_matrix_market(a: &Path, b: Option<&Path>, c: &Path) -> Result<LtiSystem> {
    let a = read_matrix_market(a)?;
    let b = b.map(read_matrix_market).transpose()?;
    let c = read_matrix_market(c)?;
    LtiSystem::new(a, b, c, TimeKind::Continuous)
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

fn parse(text: &str) -> ParseResult<DenseMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or((1, "empty file".to_string()))?;
    let (layout, field, symmetry) = parse_banner(banner).map_err(|m| (1, m))?;

    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = data.next().ok_or((1, "missing size line".to_string()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| (size_line, format!("bad size line: {e}")))?;

    match layout {
        Layout::Array => {
            let [rows, cols] = dims[..] else {
                return Err((size_line, "array size line needs 2 integers".into()));
            };
            if symmetry != Symmetry::General && rows != cols {
                return Err((size_line, "symmetric matrix must be square".into()));
            }
            let mut m = DenseMatrix::zeros(rows, cols);
            // column-major; symmetric variants list the lower triangle only
            let mut slots = Vec::new();
            for j in 0..cols {
                let start = match symmetry {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::Skew => j + 1,
                };
                for i in start..rows {
                    slots.push((i, j));
                }
            }
            let mut next = 0;
            for (line, l) in data {
                for tok in l.split_whitespace() {
                    let v = parse_value(tok).map_err(|m| (line, m))?;
                    let &(i, j) = slots
                        .get(next)
                        .ok_or((line, format!("more than {} entries", slots.len())))?;
                    set(&mut m, i, j, v, symmetry);
                    next += 1;
                }
            }
            if next != slots.len() {
                return Err((
                    text.lines().count(),
                    format!("expected {} entries, found {next}", slots.len()),
                ));
            }
            Ok(m)
        }
        Layout::Coordinate => {
            let [rows, cols, nnz] = dims[..] else {
                return Err((size_line, "coordinate size line needs 3 integers".into()));
            };
            let mut m = DenseMatrix::zeros(rows, cols);
            let mut count = 0;
            for (line, l) in data {
                let toks: Vec<&str> = l.split_whitespace().collect();
                let want = if field == Field::Pattern { 2 } else { 3 };
                if toks.len() != want {
                    return Err((
                        line,
                        format!("expected {want} fields, found {}", toks.len()),
                    ));
                }
                let idx = |t: &str| -> ParseResult<usize> {
                    t.parse::<usize>()
                        .map_err(|e| (line, format!("bad index {t:?}: {e}")))
                };
                let (i, j) = (idx(toks[0])?, idx(toks[1])?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err((line, format!("index ({i}, {j}) outside {rows}x{cols}")));
                }
                let v = if field == Field::Pattern {
                    1.0
                } else {
                    parse_value(toks[2]).map_err(|m| (line, m))?
                };
                set(&mut m, i - 1, j - 1, v, symmetry);
                count += 1;
                if count > nnz {
                    return Err((line, format!("more than {nnz} entries")));
                }
            }
            if count != nnz {
                return Err((
                    text.lines().count(),
                    format!("expected {nnz} entries, found {count}"),
                ));
            }
            Ok(m)
        }
    }
}

fn parse_banner(banner: &str) -> std::result::Result<(Layout, Field, Symmetry), String> {
    let toks: Vec<String> = banner
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect();
    if toks.len() != 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(format!("bad header {banner:?}"));
    }
    let layout = match toks[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        f => return Err(format!("unsupported format {f:?}")),
    };
    let field = match toks[3].as_str() {
        "real" | "integer" | "double" => Field::Real,
        "pattern" if layout == Layout::Coordinate => Field::Pattern,
        f => return Err(format!("unsupported field {f:?}")),
    };
    let symmetry = match toks[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        s => return Err(format!("unsupported symmetry {s:?}")),
    };
    Ok((layout, field, symmetry))
}

fn parse_value(tok: &str) -> std::result::Result<f64, String> {
    let v: f64 = tok.parse().map_err(|e| format!("bad value {tok:?}: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value {tok:?}"))
    }
}

fn set(m: &mut DenseMatrix, i: usize, j: usize, v: f64, symmetry: Symmetry) {
    m[(i, j)] = v;
    if i != j {
        match symmetry {
            Symmetry::General => {}
            Symmetry::Symmetric => m[(j, i)] = v,
            Symmetry::Skew => m[(j, i)] = -v,
        }
    }
}
