//! Plain-text matrix files.
//!
//! A matrix file starts with `q p` followed by `q` rows of `p` numbers. A
//! stacked file starts with `K q p` and holds `G` blocks, each introduced by
//! a `pair j k` line. Blank lines and lines starting with `#` are skipped.
//! Values are written with 17 significant digits so they read back exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::contrast::{pair_count, pair_index, pairs, StackedPairMatrix};
use crate::error::{ClairError, Result};

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_rows(out: &mut String, m: nalgebra::DMatrixView<'_, f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_value(m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    write_rows(&mut out, m.as_view());
    out
}

pub fn format_stacked(s: &StackedPairMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", s.clients(), s.block_rows(), s.cols());
    for pair in pairs(s.clients()) {
        let _ = writeln!(out, "pair {} {}", pair.j, pair.k);
        write_rows(&mut out, s.block(pair.g));
    }
    out
}

struct Lines<'a> {
    source: &'a str,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, source: &'a str) -> Self {
        Self {
            source,
            inner: text.lines().enumerate(),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> ClairError {
        ClairError::Parse {
            source_name: self.source.to_string(),
            line,
            message: message.into(),
        }
    }

    /// Next content line as (1-based line number, trimmed text).
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn expect_content(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = 0;
        self.next_content()
            .ok_or_else(|| self.err(last, format!("unexpected end of input, expected {what}")))
    }

    fn header(&mut self, count: usize) -> Result<Vec<usize>> {
        let (line, text) = self.expect_content("a header line")?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != count {
            return Err(self.err(line, format!("header must have {count} integers, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse::<usize>().map_err(|_| self.err(line, format!("invalid integer '{f}'"))))
            .collect()
    }

    fn rows_into(&mut self, target: &mut nalgebra::DMatrixViewMut<'_, f64>) -> Result<()> {
        let (rows, cols) = target.shape();
        for i in 0..rows {
            let (line, text) = self.expect_content(&format!("matrix row {}", i + 1))?;
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.len() != cols {
                return Err(self.err(line, format!("expected {cols} values, found {}", fields.len())));
            }
            for (j, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| self.err(line, format!("invalid number '{f}'")))?;
                if !v.is_finite() {
                    return Err(self.err(line, format!("non-finite value '{f}'")));
                }
                target[(i, j)] = v;
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        match self.next_content() {
            Some((line, _)) => Err(self.err(line, "trailing content after matrix")),
            None => Ok(()),
        }
    }
}

pub fn parse_matrix(text: &str, source: &str) -> Result<DMatrix<f64>> {
    let mut lines = Lines::new(text, source);
    let dims = lines.header(2)?;
    let mut m = DMatrix::zeros(dims[0], dims[1]);
    lines.rows_into(&mut m.as_view_mut())?;
    lines.finish()?;
    Ok(m)
}

pub fn parse_stacked(text: &str, source: &str) -> Result<StackedPairMatrix> {
    let mut lines = Lines::new(text, source);
    let dims = lines.header(3)?;
    let (clients, q, p) = (dims[0], dims[1], dims[2]);
    if clients < 2 {
        return Err(ClairError::InsufficientClients(clients));
    }
    let mut out = StackedPairMatrix::zeros(clients, q, p);
    let mut seen = vec![false; pair_count(clients)];
    for _ in 0..pair_count(clients) {
        let (line, text) = lines.expect_content("a 'pair j k' line")?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            ["pair", j, k] => j.parse::<usize>().ok().zip(k.parse::<usize>().ok()),
            _ => None,
        };
        let (j, k) = parsed.ok_or_else(|| lines.err(line, "expected 'pair j k'"))?;
        let idx = pair_index(j, k, clients).map_err(|e| lines.err(line, e.to_string()))?;
        if std::mem::replace(&mut seen[idx.g], true) {
            return Err(lines.err(line, format!("duplicate pair ({j}, {k})")));
        }
        let mut block = out.block_mut(idx.g);
        lines.rows_into(&mut block)?;
        if j > k {
            block.neg_mut();
        }
    }
    lines.finish()?;
    Ok(out)
}

fn io_err(path: &Path, e: std::io::Error) -> ClairError {
    ClairError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m)).map_err(|e| io_err(path, e))
}

pub fn read_stacked(path: &Path) -> Result<StackedPairMatrix> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_stacked(&text, &path.display().to_string())
}

pub fn write_stacked(path: &Path, s: &StackedPairMatrix) -> Result<()> {
    fs::write(path, format_stacked(s)).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// File name for client `k` in a weights directory.
pub fn client_file_name(k: usize) -> String {
    format!("client_{k}.mat")
}

/// Read `client_0.mat`, `client_1.mat`, ... until the first missing index.
pub fn read_client_dir(dir: &Path) -> Result<Vec<DMatrix<f64>>> {
    if !dir.is_dir() {
        return Err(ClairError::Io {
            path: dir.display().to_string(),
            message: "not a directory".into(),
        });
    }
    let mut out = Vec::new();
    loop {
        let path = dir.join(client_file_name(out.len()));
        if !path.exists() {
            break;
        }
        out.push(read_matrix(&path)?);
    }
    if let Some(first) = out.first() {
        let shape = first.shape();
        for (k, w) in out.iter().enumerate() {
            if w.shape() != shape {
                return Err(ClairError::Dimension {
                    expected: format!("{}x{}", shape.0, shape.1),
                    found: format!("{}x{} in {}", w.nrows(), w.ncols(), client_file_name(k)),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_client_dir(dir: &Path, weights: &[DMatrix<f64>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (k, w) in weights.iter().enumerate() {
        write_matrix(&dir.join(client_file_name(k)), w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::build_contrast;
    use proptest::prelude::*;

    #[test]
    fn parses_with_comments() {
        let text = "# weights\n2 3\n1 2 3\n\n# middle\n4.5 -6 7e-3\n";
        let m = parse_matrix(text, "mem").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.5, -6.0, 7e-3]));
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_matrix("2 2\n1 2\n3 x\n", "w.mat").unwrap_err();
        assert_eq!(
            err,
            ClairError::Parse {
                source_name: "w.mat".into(),
                line: 3,
                message: "invalid number 'x'".into()
            }
        );
        assert!(matches!(parse_matrix("2 2\n1 2 3\n", "m"), Err(ClairError::Parse { line: 2, .. })));
        assert!(parse_matrix("2 2\n1 2\n", "m").is_err());
        assert!(parse_matrix("1 1\n1\n2\n", "m").is_err());
        assert!(parse_matrix("1 1\nNaN\n", "m").is_err());
    }

    #[test]
    fn stacked_round_trip_and_orientation() {
        let w: Vec<_> = (0..3).map(|k| DMatrix::from_element(2, 2, k as f64 + 0.25)).collect();
        let d = build_contrast(&w).unwrap();
        assert_eq!(parse_stacked(&format_stacked(&d), "s").unwrap(), d);

        // blocks may be listed in any order and orientation
        let text = "3 1 2\npair 2 1\n1 1\npair 0 1\n2 2\npair 0 2\n3 3\n";
        let s = parse_stacked(text, "s").unwrap();
        assert_eq!(s.block(0)[(0, 0)], 2.0);
        assert_eq!(s.block(2)[(0, 0)], -1.0);
        assert!(parse_stacked("3 1 1\npair 0 1\n1\npair 0 1\n1\npair 1 2\n1\n", "s").is_err());
    }

    proptest! {
        #[test]
        fn matrix_text_round_trip_is_exact(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in proptest::collection::vec(-1e12f64..1e12, 25),
        ) {
            let m = DMatrix::from_fn(rows, cols, |i, j| seed[i * 5 + j] / (1.0 + j as f64 * 3.7));
            let back = parse_matrix(&format_matrix(&m), "p").unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
