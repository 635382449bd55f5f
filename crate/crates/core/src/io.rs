//! Long-format CSV series files and preprocessing transforms.
//!
//! A series file has the header `t,row,col,value`, one cell per line, with
//! `t` a 1-based time index and `row`/`col` free-form labels. Labels are
//! ordered by first appearance.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{MarError, Result};
use crate::kron::DenseMatrix;
use crate::model::MatrixSeries;

const HEADER: [&str; 4] = ["t", "row", "col", "value"];

fn parse_err(line: usize, msg: impl Into<String>) -> MarError {
    MarError::Parse { line, msg: msg.into() }
}

pub fn load_series(path: impl AsRef<Path>) -> Result<MatrixSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    read_series(file)
}

pub fn read_series(reader: impl Read) -> Result<MatrixSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected header t,row,col,value"))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    let fields: Vec<&str> = header.iter().map(|f| f.trim_start_matches('\u{feff}')).collect();
    if fields != HEADER {
        return Err(parse_err(1, format!("header must be t,row,col,value, got {}", fields.join(","))));
    }

    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    let mut row_idx: HashMap<String, usize> = HashMap::new();
    let mut col_idx: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut t_max = 0;

    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", rec.len())));
        }
        let t: usize = rec[0]
            .trim()
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| parse_err(line, format!("time index '{}' is not a positive integer", &rec[0])))?;
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("value '{}' is not a number", &rec[3])))?;
        if !value.is_finite() {
            return Err(parse_err(line, format!("value '{}' is not finite", &rec[3])));
        }
        let (row, col) = (rec[1].to_string(), rec[2].to_string());
        let i = *row_idx.entry(row.clone()).or_insert_with(|| {
            rows.push(row.clone());
            rows.len() - 1
        });
        let j = *col_idx.entry(col.clone()).or_insert_with(|| {
            cols.push(col.clone());
            cols.len() - 1
        });
        if cells.insert((t, i, j), value).is_some() {
            return Err(MarError::Duplicate { line, t, row, col });
        }
        t_max = t_max.max(t);
    }
    if cells.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }

    let (m, n) = (rows.len(), cols.len());
    let mut values = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let mut x = DenseMatrix::zeros(m, n);
        for j in 0..n {
            for i in 0..m {
                x[(i, j)] = *cells.get(&(t, i, j)).ok_or_else(|| MarError::IncompleteGrid {
                    t,
                    row: rows[i].clone(),
                    col: cols[j].clone(),
                })?;
            }
        }
        values.push(x);
    }
    MatrixSeries::new(values)?.with_labels(rows, cols)
}

/// Formats a value with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_series(series: &MatrixSeries, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER).map_err(csv_err)?;
    let (rows, cols) = (series.row_names(), series.col_names());
    for (t, x) in series.values().iter().enumerate() {
        let ts = (t + 1).to_string();
        for i in 0..series.m() {
            for j in 0..series.n() {
                w.write_record([ts.as_str(), &rows[i], &cols[j], &fmt_f64(x[(i, j)])])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_series(series: &MatrixSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_series(series, std::io::BufWriter::new(file))
}

pub(crate) fn csv_err(e: csv::Error) -> MarError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MarError::Io(io),
        other => MarError::Numeric(format!("csv output failed: {other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreprocessKind {
    /// `X_t - X_{t-1}`.
    Diff,
    /// `log X_t - log X_{t-1}`; requires positive values.
    LogDiff,
    /// `100 (X_t - X_{t-1}) / X_{t-1}`.
    PctFromLast,
    /// Subtracts the mean of each `(i, j, t mod period)` class.
    SeasonalDemean(usize),
    /// Divides row `i` by its pooled standard deviation, the root of
    /// `(nT)^{-1} sum_j sum_t (x_ijt - mean_ij)^2`.
    RowNormalize,
    /// Subtracts each entry's sample mean.
    Demean,
}

/// One transform, optionally restricted to rows with the given labels.
/// Differencing transforms shorten the series by one; unselected rows then
/// lose their first observation so the grid stays aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStep {
    pub kind: PreprocessKind,
    pub applies_to: Option<Vec<String>>,
}

impl PreprocessStep {
    pub fn new(kind: PreprocessKind) -> Result<Self> {
        if let PreprocessKind::SeasonalDemean(p) = kind {
            if p < 2 {
                return Err(MarError::Config(format!("seasonal period must be at least 2, got {p}")));
            }
        }
        Ok(PreprocessStep { kind, applies_to: None })
    }

    pub fn for_rows(mut self, rows: Vec<String>) -> Self {
        self.applies_to = Some(rows);
        self
    }
}

impl fmt::Display for PreprocessStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PreprocessKind::Diff => f.write_str("diff")?,
            PreprocessKind::LogDiff => f.write_str("logdiff")?,
            PreprocessKind::PctFromLast => f.write_str("pct")?,
            PreprocessKind::SeasonalDemean(p) => write!(f, "seasonal:{p}")?,
            PreprocessKind::RowNormalize => f.write_str("rownormalize")?,
            PreprocessKind::Demean => f.write_str("demean")?,
        }
        if let Some(rows) = &self.applies_to {
            write!(f, "@{}", rows.join("|"))?;
        }
        Ok(())
    }
}

/// Parses `kind[:period][@row|row...]`, e.g. `logdiff@GDP|PROD` or `seasonal:4`.
impl FromStr for PreprocessStep {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        let (spec, rows) = match s.split_once('@') {
            Some((a, b)) => (a, Some(b.split('|').map(|r| r.trim().to_string()).collect::<Vec<_>>())),
            None => (s, None),
        };
        let (name, arg) = match spec.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (spec, None),
        };
        let kind = match (name.trim().to_ascii_lowercase().as_str(), arg) {
            ("diff", None) => PreprocessKind::Diff,
            ("logdiff", None) => PreprocessKind::LogDiff,
            ("pct", None) => PreprocessKind::PctFromLast,
            ("seasonal", Some(p)) => PreprocessKind::SeasonalDemean(
                p.trim()
                    .parse()
                    .map_err(|_| MarError::Config(format!("seasonal period '{p}' is not an integer")))?,
            ),
            ("rownormalize", None) => PreprocessKind::RowNormalize,
            ("demean", None) => PreprocessKind::Demean,
            _ => return Err(MarError::Config(format!("unknown preprocessing step '{s}'"))),
        };
        let step = PreprocessStep::new(kind)?;
        Ok(match rows {
            Some(r) => step.for_rows(r),
            None => step,
        })
    }
}

fn selected_rows(series: &MatrixSeries, step: &PreprocessStep) -> Result<Vec<bool>> {
    let names = series.row_names();
    match &step.applies_to {
        None => Ok(vec![true; series.m()]),
        Some(want) => {
            for w in want {
                if !names.contains(w) {
                    return Err(MarError::Config(format!("step '{step}' names unknown row '{w}'")));
                }
            }
            Ok(names.iter().map(|r| want.contains(r)).collect())
        }
    }
}

fn relabel(series: &MatrixSeries, values: Vec<DenseMatrix>) -> Result<MatrixSeries> {
    let out = MatrixSeries::new(values)?;
    match (series.row_labels(), series.col_labels()) {
        (Some(r), Some(c)) => out.with_labels(r.to_vec(), c.to_vec()),
        _ => Ok(out),
    }
}

fn difference(
    series: &MatrixSeries,
    sel: &[bool],
    f: impl Fn(f64, f64, usize, usize, usize) -> Result<f64>,
) -> Result<MatrixSeries> {
    series.require_len(2, "differencing")?;
    let vals = series.values();
    let mut out = Vec::with_capacity(vals.len() - 1);
    for t in 1..vals.len() {
        let mut x = vals[t].clone();
        for j in 0..series.n() {
            for i in (0..series.m()).filter(|&i| sel[i]) {
                x[(i, j)] = f(vals[t][(i, j)], vals[t - 1][(i, j)], t, i, j)?;
            }
        }
        out.push(x);
    }
    relabel(series, out)
}

fn location(series: &MatrixSeries, t: usize, i: usize, j: usize) -> String {
    format!("(t={},row={},col={})", t + 1, series.row_names()[i], series.col_names()[j])
}

fn apply_step(series: &MatrixSeries, step: &PreprocessStep) -> Result<MatrixSeries> {
    let sel = selected_rows(series, step)?;
    let (m, n, t_len) = (series.m(), series.n(), series.len());
    let vals = series.values();
    match step.kind {
        PreprocessKind::Diff => difference(series, &sel, |x, prev, _, _, _| Ok(x - prev)),
        PreprocessKind::LogDiff => difference(series, &sel, |x, prev, t, i, j| {
            for (v, tt) in [(prev, t - 1), (x, t)] {
                if !(v > 0.0) {
                    return Err(MarError::Domain(format!(
                        "log of nonpositive value {v} at {}",
                        location(series, tt, i, j)
                    )));
                }
            }
            Ok(x.ln() - prev.ln())
        }),
        PreprocessKind::PctFromLast => difference(series, &sel, |x, prev, t, i, j| {
            if prev == 0.0 {
                return Err(MarError::Domain(format!(
                    "percent change from zero at {}",
                    location(series, t - 1, i, j)
                )));
            }
            Ok(100.0 * (x - prev) / prev)
        }),
        PreprocessKind::SeasonalDemean(p) => {
            let mut sums = vec![DenseMatrix::zeros(m, n); p];
            let mut counts = vec![0usize; p];
            for (t, x) in vals.iter().enumerate() {
                sums[t % p] += x;
                counts[t % p] += 1;
            }
            let out = vals
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    let mean = &sums[t % p] / counts[t % p] as f64;
                    DenseMatrix::from_fn(m, n, |i, j| if sel[i] { x[(i, j)] - mean[(i, j)] } else { x[(i, j)] })
                })
                .collect();
            relabel(series, out)
        }
        PreprocessKind::Demean => {
            let mean = vals.iter().fold(DenseMatrix::zeros(m, n), |acc, x| acc + x) / t_len as f64;
            let out = vals
                .iter()
                .map(|x| DenseMatrix::from_fn(m, n, |i, j| if sel[i] { x[(i, j)] - mean[(i, j)] } else { x[(i, j)] }))
                .collect();
            relabel(series, out)
        }
        PreprocessKind::RowNormalize => {
            let mean = vals.iter().fold(DenseMatrix::zeros(m, n), |acc, x| acc + x) / t_len as f64;
            let mut scale = vec![1.0; m];
            for i in (0..m).filter(|&i| sel[i]) {
                let ss: f64 = vals
                    .iter()
                    .map(|x| (0..n).map(|j| (x[(i, j)] - mean[(i, j)]).powi(2)).sum::<f64>())
                    .sum();
                let sd = (ss / (n * t_len) as f64).sqrt();
                if !(sd > 0.0) {
                    return Err(MarError::Degenerate(format!(
                        "row '{}' has zero variance",
                        series.row_names()[i]
                    )));
                }
                scale[i] = sd;
            }
            let out = vals.iter().map(|x| DenseMatrix::from_fn(m, n, |i, j| x[(i, j)] / scale[i])).collect();
            relabel(series, out)
        }
    }
}

/// Applies `steps` in order.
pub fn preprocess(series: &MatrixSeries, steps: &[PreprocessStep]) -> Result<MatrixSeries> {
    steps.iter().try_fold(series.clone(), |s, step| apply_step(&s, step))
}
