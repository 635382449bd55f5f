//! One-step prediction, residual diagnostics and rolling out-of-sample
//! evaluation against VAR(1) and univariate AR baselines.

use std::fmt;
use std::str::FromStr;

use crate::error::{MarError, Result};
use crate::estimators::{fit, fit_var1, residuals_from, FitOptions, MarFit, Method, Var1Fit};
use crate::kron::{pinv, DenseMatrix, DenseVector};
use crate::model::MatrixSeries;

/// `A X B^T` at the fitted coefficients.
pub fn predict_one(fit: &MarFit, x: &DenseMatrix) -> Result<DenseMatrix> {
    let (m, n) = (fit.model.m(), fit.model.n());
    if x.shape() != (m, n) {
        return Err(MarError::dim(format!(
            "prediction input is {}x{}, fit is {m}x{n}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(fit.a() * x * fit.b().transpose())
}

/// `R_t = X_t - A X_{t-1} B^T` for `t = 2..T`.
pub fn residuals(fit: &MarFit, series: &MatrixSeries) -> Result<MatrixSeries> {
    if (series.m(), series.n()) != (fit.model.m(), fit.model.n()) {
        return Err(MarError::dim("fit and series have different dimensions"));
    }
    series.require_len(2, "residuals")?;
    residuals_from(fit.a(), fit.b(), series)
}

pub fn rss(resid: &MatrixSeries) -> f64 {
    resid.values().iter().map(|r| r.norm_squared()).sum()
}

#[derive(Debug, Clone)]
pub struct AcfReport {
    /// `values[k][(i, j)]` is the lag-`k` autocorrelation of series `(i, j)`,
    /// for `k = 0..=max_lag`.
    pub values: Vec<DenseMatrix>,
    pub max_lag: usize,
    pub sample_size: usize,
}

/// Per-entry sample autocorrelations, demeaned, with the biased `1/T`
/// denominator. A constant series has zero autocorrelation at every lag > 0.
pub fn acf(series: &MatrixSeries, max_lag: usize) -> Result<AcfReport> {
    let t_len = series.len();
    if max_lag + 1 >= t_len {
        return Err(MarError::precondition(format!(
            "max_lag must be below T - 1 = {}, got {max_lag}",
            t_len.saturating_sub(1)
        )));
    }
    let (m, n) = (series.m(), series.n());
    let mut values = vec![DenseMatrix::zeros(m, n); max_lag + 1];
    let vals = series.values();
    for i in 0..m {
        for j in 0..n {
            let x: Vec<f64> = vals.iter().map(|v| v[(i, j)]).collect();
            let mean = x.iter().sum::<f64>() / t_len as f64;
            let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
            let c0: f64 = dev.iter().map(|d| d * d).sum();
            values[0][(i, j)] = 1.0;
            for k in 1..=max_lag {
                let ck: f64 = dev[k..].iter().zip(&dev).map(|(a, b)| a * b).sum();
                values[k][(i, j)] = if c0 > 0.0 { (ck / c0).clamp(-1.0, 1.0) } else { 0.0 };
            }
        }
    }
    Ok(AcfReport {
        values,
        max_lag,
        sample_size: t_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForecastMethod {
    Proj,
    Lse,
    Mle,
    Var1,
    Iar1,
    Iar2,
}

impl ForecastMethod {
    pub const ALL: [ForecastMethod; 6] = [
        ForecastMethod::Proj,
        ForecastMethod::Lse,
        ForecastMethod::Mle,
        ForecastMethod::Var1,
        ForecastMethod::Iar1,
        ForecastMethod::Iar2,
    ];

    fn mar_method(self) -> Option<Method> {
        match self {
            ForecastMethod::Proj => Some(Method::Proj),
            ForecastMethod::Lse => Some(Method::Lse),
            ForecastMethod::Mle => Some(Method::Mle),
            _ => None,
        }
    }

    /// Smallest training length the method can be fitted on.
    pub fn min_train_len(self, m: usize, n: usize, intercept: bool) -> usize {
        let k = usize::from(intercept);
        match self {
            ForecastMethod::Proj | ForecastMethod::Var1 => m * n + 2,
            ForecastMethod::Lse => 3,
            ForecastMethod::Mle => {
                let mut t = 3;
                while m * (t - 1) <= n || n * (t - 1) <= m {
                    t += 1;
                }
                t
            }
            // One more regression row than parameters.
            ForecastMethod::Iar1 => 1 + (1 + k) + 1,
            ForecastMethod::Iar2 => 2 + (2 + k) + 1,
        }
    }
}

impl fmt::Display for ForecastMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mar_method() {
            Some(m) => m.fmt(f),
            None => f.write_str(match self {
                ForecastMethod::Var1 => "VAR1",
                ForecastMethod::Iar1 => "iAR1",
                _ => "iAR2",
            }),
        }
    }
}

impl FromStr for ForecastMethod {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "var1" => Ok(ForecastMethod::Var1),
            "iar1" => Ok(ForecastMethod::Iar1),
            "iar2" => Ok(ForecastMethod::Iar2),
            other => other.parse::<Method>().map(|m| match m {
                Method::Proj => ForecastMethod::Proj,
                Method::Lse => ForecastMethod::Lse,
                Method::Mle => ForecastMethod::Mle,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOptions {
    pub fit: FitOptions,
    /// Refit on all data before each prediction; otherwise fit once on the
    /// initial window.
    pub refit_each_step: bool,
    /// Include an intercept in the univariate AR baselines.
    pub iar_intercept: bool,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            fit: FitOptions::default(),
            refit_each_step: true,
            iar_intercept: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForecastReport {
    pub method: ForecastMethod,
    /// First predicted time point (1-based).
    pub t0: usize,
    /// `predictions[s]` forecasts `X_{t0 + s}` from data up to `t0 + s - 1`.
    pub predictions: Vec<DenseMatrix>,
    pub step_errors: Vec<f64>,
    pub total_error: f64,
    pub refit_each_step: bool,
}

/// Per-entry AR(p) coefficients `[c, phi_1, .., phi_p]` (intercept first
/// when present).
struct IarFit {
    order: usize,
    intercept: bool,
    coefs: Vec<Vec<DenseVector>>,
}

impl IarFit {
    fn new(series: &MatrixSeries, order: usize, intercept: bool) -> Result<Self> {
        let (m, n) = (series.m(), series.n());
        let vals = series.values();
        let rows = vals.len() - order;
        let k = order + usize::from(intercept);
        let mut coefs = vec![Vec::with_capacity(n); m];
        for (i, row) in coefs.iter_mut().enumerate() {
            for j in 0..n {
                let mut z = DenseMatrix::zeros(rows, k);
                let mut y = DenseVector::zeros(rows);
                for r in 0..rows {
                    let t = r + order;
                    y[r] = vals[t][(i, j)];
                    let mut c = 0;
                    if intercept {
                        z[(r, 0)] = 1.0;
                        c = 1;
                    }
                    for lag in 1..=order {
                        z[(r, c + lag - 1)] = vals[t - lag][(i, j)];
                    }
                }
                row.push(pinv(&z, None)? * y);
            }
        }
        Ok(IarFit { order, intercept, coefs })
    }

    /// Predicts the value following `history` (most recent last).
    fn predict(&self, history: &[DenseMatrix]) -> DenseMatrix {
        let (m, n) = history[0].shape();
        let last = history.len() - 1;
        DenseMatrix::from_fn(m, n, |i, j| {
            let beta = &self.coefs[i][j];
            let (mut y, c) = if self.intercept { (beta[0], 1) } else { (0.0, 0) };
            for lag in 1..=self.order {
                y += beta[c + lag - 1] * history[last + 1 - lag][(i, j)];
            }
            y
        })
    }
}

enum Fitted {
    Mar(MarFit),
    Var1(Var1Fit),
    Iar(IarFit),
}

impl Fitted {
    fn new(train: &MatrixSeries, method: ForecastMethod, opts: &ForecastOptions) -> Result<Self> {
        Ok(match method {
            ForecastMethod::Var1 => Fitted::Var1(fit_var1(train)?),
            ForecastMethod::Iar1 => Fitted::Iar(IarFit::new(train, 1, opts.iar_intercept)?),
            ForecastMethod::Iar2 => Fitted::Iar(IarFit::new(train, 2, opts.iar_intercept)?),
            other => Fitted::Mar(fit(train, other.mar_method().expect("MAR method"), &opts.fit)?),
        })
    }

    fn predict(&self, history: &[DenseMatrix]) -> Result<DenseMatrix> {
        let last = &history[history.len() - 1];
        match self {
            Fitted::Mar(f) => predict_one(f, last),
            Fitted::Var1(f) => f.predict(last),
            Fitted::Iar(f) => Ok(f.predict(history)),
        }
    }
}

/// For each `t = t0..=T` (1-based), fits on `X_1..X_{t-1}` and records the
/// squared Frobenius error of the one-step prediction of `X_t`.
pub fn rolling_forecast(
    series: &MatrixSeries,
    t0: usize,
    method: ForecastMethod,
    opts: &ForecastOptions,
) -> Result<ForecastReport> {
    let t_len = series.len();
    let min = method.min_train_len(series.m(), series.n(), opts.iar_intercept);
    if t0 < min + 1 || t0 > t_len {
        return Err(MarError::precondition(format!(
            "{method} needs at least {min} training points and a target, so t0 must be in {}..={t_len}; got {t0}",
            min + 1
        )));
    }
    let vals = series.values();
    let mut fitted = None;
    let mut predictions = Vec::with_capacity(t_len - t0 + 1);
    let mut step_errors = Vec::with_capacity(t_len - t0 + 1);
    for t in t0..=t_len {
        // X_1..X_{t-1} are indices 0..t-1.
        if opts.refit_each_step || fitted.is_none() {
            fitted = Some(Fitted::new(&series.slice(0..t - 1)?, method, opts)?);
        }
        let pred = fitted.as_ref().expect("fitted above").predict(&vals[..t - 1])?;
        step_errors.push((&pred - &vals[t - 1]).norm_squared());
        predictions.push(pred);
    }
    Ok(ForecastReport {
        method,
        t0,
        total_error: step_errors.iter().sum(),
        predictions,
        step_errors,
        refit_each_step: opts.refit_each_step,
    })
}
