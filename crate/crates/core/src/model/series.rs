use std::ops::Range;

use crate::error::{MarError, Result};
use crate::kron::{ensure_finite, DenseMatrix};

/// Ordered sequence of `T` real `m x n` observations with optional axis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    m: usize,
    n: usize,
    values: Vec<DenseMatrix>,
    row_labels: Option<Vec<String>>,
    col_labels: Option<Vec<String>>,
}

impl MatrixSeries {
    pub fn new(values: Vec<DenseMatrix>) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| MarError::precondition("a series needs at least one observation"))?;
        let (m, n) = first.shape();
        if m == 0 || n == 0 {
            return Err(MarError::dim("observations must have at least one row and column"));
        }
        for (t, x) in values.iter().enumerate() {
            if x.shape() != (m, n) {
                return Err(MarError::dim(format!(
                    "observation {} is {}x{}, expected {m}x{n}",
                    t + 1,
                    x.nrows(),
                    x.ncols()
                )));
            }
            ensure_finite(x, &format!("observation {}", t + 1))?;
        }
        Ok(MatrixSeries {
            m,
            n,
            values,
            row_labels: None,
            col_labels: None,
        })
    }

    pub fn with_labels(mut self, rows: Vec<String>, cols: Vec<String>) -> Result<Self> {
        if rows.len() != self.m || cols.len() != self.n {
            return Err(MarError::dim(format!(
                "labels have lengths {}x{}, series is {}x{}",
                rows.len(),
                cols.len(),
                self.m,
                self.n
            )));
        }
        self.row_labels = Some(rows);
        self.col_labels = Some(cols);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of time points `T`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[DenseMatrix] {
        &self.values
    }

    /// Observation at 0-based time index `t`.
    pub fn get(&self, t: usize) -> &DenseMatrix {
        &self.values[t]
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn col_labels(&self) -> Option<&[String]> {
        self.col_labels.as_deref()
    }

    /// Row labels, falling back to `1..=m`.
    pub fn row_names(&self) -> Vec<String> {
        self.row_labels
            .clone()
            .unwrap_or_else(|| (1..=self.m).map(|i| i.to_string()).collect())
    }

    pub fn col_names(&self) -> Vec<String> {
        self.col_labels
            .clone()
            .unwrap_or_else(|| (1..=self.n).map(|i| i.to_string()).collect())
    }

    /// Sub-series over a 0-based half-open time range, keeping labels.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(MarError::Index(format!(
                "time range {}..{} invalid for series of length {}",
                range.start,
                range.end,
                self.len()
            )));
        }
        Ok(MatrixSeries {
            m: self.m,
            n: self.n,
            values: self.values[range].to_vec(),
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
        })
    }

    /// The series of transposed observations (rows and columns swap roles).
    pub fn transposed(&self) -> Self {
        MatrixSeries {
            m: self.n,
            n: self.m,
            values: self.values.iter().map(|x| x.transpose()).collect(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
        }
    }

    pub(crate) fn require_len(&self, min: usize, what: &str) -> Result<()> {
        if self.len() < min {
            return Err(MarError::precondition(format!(
                "{what} needs at least {min} time points, series has {}",
                self.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(
        values: Vec<DenseMatrix>,
        row_labels: Option<Vec<String>>,
        col_labels: Option<Vec<String>>,
    ) -> Self {
        let (m, n) = values[0].shape();
        MatrixSeries {
            m,
            n,
            values,
            row_labels,
            col_labels,
        }
    }
}
