//! Contingency tables under product-multinomial sampling.
//!
//! Rows are treatments (`I` of them), columns are ordered response
//! categories (`J`). Every vector over cells uses lexicographic order:
//! cell `(i, j)` lives at index `i * J + j` (zero-based).

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observed `I x J` counts with fixed, positive row totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<u64>,
    rows: usize,
    cols: usize,
    row_totals: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    /// Builds a table from signed counts so that negative input is reported
    /// instead of wrapping.
    pub fn from_counts<R: AsRef<[i64]>>(counts: &[R]) -> Result<Self> {
        let rows = counts.len();
        let cols = counts.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows < 2 || cols < 2 {
            return Err(Error::Dimension(format!(
                "a table needs at least 2 rows and 2 columns, got {rows}x{cols}"
            )));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (i, row) in counts.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {} has {} entries, expected {cols}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v < 0 {
                    return Err(Error::NegativeCount { row: i + 1, column: j + 1, value: v });
                }
                flat.push(v as u64);
            }
        }
        Self::from_flat(flat, rows, cols)
    }

    /// Builds a table from a lexicographic vector of unsigned counts.
    pub fn from_flat(counts: Vec<u64>, rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Dimension(format!(
                "a table needs at least 2 rows and 2 columns, got {rows}x{cols}"
            )));
        }
        if counts.len() != rows * cols {
            return Err(Error::LengthMismatch { left: counts.len(), right: rows * cols });
        }
        let row_totals: Vec<u64> = counts.chunks(cols).map(|r| r.iter().sum()).collect();
        if let Some(i) = row_totals.iter().position(|&t| t == 0) {
            return Err(Error::EmptyRow { row: i + 1 });
        }
        let total = row_totals.iter().sum();
        Ok(Self { counts, rows, cols, row_totals, total })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Count in cell `(i, j)`, zero-based.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    /// All counts in lexicographic order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.count(i, j)).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Row fractions `n_i / n`.
    pub fn row_fractions(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.row_totals.iter().map(|&t| t as f64 / n).collect()
    }

    pub fn has_zero_cell(&self) -> bool {
        self.counts.contains(&0)
    }

    /// First zero cell, one-based.
    pub fn first_zero_cell(&self) -> Option<(usize, usize)> {
        self.counts
            .iter()
            .position(|&c| c == 0)
            .map(|k| (k / self.cols + 1, k % self.cols + 1))
    }

    /// Counts as reals, optionally shifted by a continuity correction.
    pub fn counts_f64(&self, correction: f64) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 + correction).collect()
    }

    /// Parses the CSV dialect: one row per treatment, comma separated
    /// nonnegative integers, optional header lines starting with `#`.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<i64>> = Vec::new();
        let mut first_data_line = None;
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            first_data_line.get_or_insert(lineno + 1);
            let mut row = Vec::new();
            for (col, field) in trimmed.split(',').enumerate() {
                let field = field.trim();
                let value: i64 = field.parse().map_err(|_| Error::Parse {
                    row: lineno + 1,
                    column: col + 1,
                    message: format!("expected a nonnegative integer, found {field:?}"),
                })?;
                if value < 0 {
                    return Err(Error::Parse {
                        row: lineno + 1,
                        column: col + 1,
                        message: format!("negative count {value}"),
                    });
                }
                row.push(value);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::Parse {
                        row: lineno + 1,
                        column: row.len().min(first.len()) + 1,
                        message: format!("expected {} fields, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        Self::from_counts(&rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks(self.cols) {
            let fields: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Joint cell probabilities with their row fractions and row-conditional
/// distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityModel {
    p: Vec<f64>,
    nu: Vec<f64>,
    pi: Vec<Vec<f64>>,
    rows: usize,
    cols: usize,
}

impl ProbabilityModel {
    /// From a lexicographic joint vector. Rows must carry positive mass.
    pub fn from_joint(p: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if p.len() != rows * cols {
            return Err(Error::LengthMismatch { left: p.len(), right: rows * cols });
        }
        let nu: Vec<f64> = p.chunks(cols).map(|r| r.iter().sum()).collect();
        if let Some(i) = nu.iter().position(|&v| v <= 0.0) {
            return Err(Error::EmptyRow { row: i + 1 });
        }
        let pi = p
            .chunks(cols)
            .zip(&nu)
            .map(|(r, &m)| r.iter().map(|&v| v / m).collect())
            .collect();
        Ok(Self { p, nu, pi, rows, cols })
    }

    /// From row fractions and row-conditional distributions:
    /// `p_ij = nu_i * pi_ij`.
    pub fn from_conditional(nu: &[f64], pi: &[Vec<f64>]) -> Result<Self> {
        if nu.len() != pi.len() {
            return Err(Error::LengthMismatch { left: nu.len(), right: pi.len() });
        }
        let rows = nu.len();
        let cols = pi.first().map(Vec::len).unwrap_or(0);
        let mut p = Vec::with_capacity(rows * cols);
        for (row, &m) in pi.iter().zip(nu) {
            if row.len() != cols {
                return Err(Error::LengthMismatch { left: row.len(), right: cols });
            }
            p.extend(row.iter().map(|&v| m * v));
        }
        Ok(Self { p, nu: nu.to_vec(), pi: pi.to_vec(), rows, cols })
    }

    pub fn joint(&self) -> &[f64] {
        &self.p
    }

    pub fn row_fractions(&self) -> &[f64] {
        &self.nu
    }

    pub fn conditional(&self) -> &[Vec<f64>] {
        &self.pi
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.cols + j]
    }
}

/// Relative frequencies `N / n`.
pub fn relative_frequencies(table: &ContingencyTable) -> ProbabilityModel {
    let n = table.total() as f64;
    let p = table.counts().iter().map(|&c| c as f64 / n).collect();
    ProbabilityModel::from_joint(p, table.rows(), table.cols())
        .expect("a valid table has positive row totals")
}

/// Local (adjacent cell) odds ratios, an `(I-1) x (J-1)` matrix.
pub fn local_odds_ratios(model: &ProbabilityModel) -> Result<DMatrix<f64>> {
    let (rows, cols) = (model.rows(), model.cols());
    let mut out = DMatrix::zeros(rows - 1, cols - 1);
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let den_a = model.get(i + 1, j);
            let den_b = model.get(i, j + 1);
            if den_a == 0.0 {
                return Err(Error::ZeroCell { row: i + 2, column: j + 1 });
            }
            if den_b == 0.0 {
                return Err(Error::ZeroCell { row: i + 1, column: j + 2 });
            }
            out[(i, j)] = model.get(i, j) * model.get(i + 1, j + 1) / (den_a * den_b);
        }
    }
    Ok(out)
}

/// Stacks the rows of `m` into one vector (the lexicographic layout).
pub fn vec_lex(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

/// Inverse of [`vec_lex`].
pub fn unvec_lex(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::LengthMismatch { left: v.len(), right: rows * cols });
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}
