//! Estimators for the MAR(1) coefficients.
//!
//! * [`fit_var1`]: unrestricted least squares on `vec X_t`.
//! * [`fit_proj`]: nearest Kronecker product of the VAR(1) estimate.
//! * [`fit_lse`]: alternating least squares on `sum_t ||X_t - A X_{t-1} B^T||_F^2`.
//! * [`fit_mle`]: Gaussian MLE with `Sigma = Sigma_c ⊗ Sigma_r`, cycling exact
//!   block updates of `A`, `B`, `Sigma_c`, `Sigma_r`.
//!
//! All MAR fits report `(A, B)` with `||A||_F = 1` and the sign rule of
//! [`crate::kron::sign_rule`]. No intercept is fitted.

use std::fmt;
use std::str::FromStr;

use nalgebra::linalg::Cholesky;

use crate::error::{MarError, Result};
use crate::kron::{nkp_project, sign_rule, symmetrize, vec, DenseMatrix};
use crate::model::{is_stationary, CovarianceSpec, MarModel, MatrixSeries};

const RIDGE: f64 = 1e-10;
// An objective this far below the data energy counts as an exact fit.
const EXACT_FIT_RATIO: f64 = 1e-28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Proj,
    Lse,
    Mle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Proj => "PROJ",
            Method::Lse => "LSE",
            Method::Mle => "MLEs",
        })
    }
}

impl FromStr for Method {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proj" => Ok(Method::Proj),
            "lse" => Ok(Method::Lse),
            "mle" | "mles" => Ok(Method::Mle),
            other => Err(MarError::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    FromProjection,
    Provided(DenseMatrix, DenseMatrix),
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub init: Init,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            rel_tol: 1e-8,
            init: Init::FromProjection,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(MarError::Config("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(MarError::Config("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Unrestricted VAR(1) estimate.
#[derive(Debug, Clone)]
pub struct Var1Fit {
    pub phi_hat: DenseMatrix,
    /// Residual covariance, averaged over `t_eff` rows.
    pub sigma_hat: DenseMatrix,
    /// `(T-1)^{-1} sum_t vec(X_{t-1}) vec(X_{t-1})^T`.
    pub gamma0_hat: DenseMatrix,
    pub t_eff: usize,
    pub m: usize,
    pub n: usize,
}

impl Var1Fit {
    /// One-step prediction `unvec(Phi vec X)`.
    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.shape() != (self.m, self.n) {
            return Err(MarError::dim(format!(
                "prediction input is {}x{}, fit is {}x{}",
                x.nrows(),
                x.ncols(),
                self.m,
                self.n
            )));
        }
        let v = &self.phi_hat * vec(x);
        Ok(DenseMatrix::from_column_slice(self.m, self.n, v.as_slice()))
    }
}

/// A fitted MAR(1) model.
#[derive(Debug, Clone)]
pub struct MarFit {
    pub model: MarModel,
    pub method: Method,
    pub iterations: usize,
    /// Objective after initialization and after each iteration. RSS for
    /// PROJ and LSE, negative log likelihood (up to constants) for MLEs.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// `R_t = X_t - A X_{t-1} B^T` for `t = 2..T`.
    pub residuals: MatrixSeries,
    /// `rho(A) * rho(B)` of the estimate; causality is reported, not enforced.
    pub rho_product: f64,
    pub warnings: Vec<String>,
}

impl MarFit {
    pub fn a(&self) -> &DenseMatrix {
        self.model.a()
    }

    pub fn b(&self) -> &DenseMatrix {
        self.model.b()
    }

    pub fn is_causal(&self) -> bool {
        self.rho_product < 1.0
    }
}

/// Rescales to `||A||_F = 1` with the sign rule, keeping `B ⊗ A` unchanged.
pub fn normalize_pair(a: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let norm = a.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(MarError::Degenerate("cannot normalize a zero (or non-finite) A".into()));
    }
    let s = sign_rule(a);
    if s > 0.0 && (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok((a.clone(), b.clone()));
    }
    Ok((a * (s / norm), b * (s * norm)))
}

fn stack_vec(xs: &[DenseMatrix]) -> DenseMatrix {
    let d = xs[0].len();
    let mut out = DenseMatrix::zeros(d, xs.len());
    for (t, x) in xs.iter().enumerate() {
        out.column_mut(t).copy_from_slice(x.as_slice());
    }
    out
}

fn var1_min_len(series: &MatrixSeries) -> usize {
    series.m() * series.n() + 2
}

pub fn fit_var1(series: &MatrixSeries) -> Result<Var1Fit> {
    let (m, n, t_len) = (series.m(), series.n(), series.len());
    let d = m * n;
    if t_len < var1_min_len(series) {
        return Err(MarError::RankDeficient(format!(
            "unrestricted VAR(1) in dimension mn={d} needs T >= {}, series has T={t_len}",
            d + 2
        )));
    }
    let vals = series.values();
    let x = stack_vec(&vals[..t_len - 1]);
    let y = stack_vec(&vals[1..]);
    let xxt = &x * x.transpose();
    let chol = Cholesky::new(xxt.clone()).ok_or_else(|| {
        MarError::RankDeficient(format!("lagged design X X^T of dimension mn={d} is singular"))
    })?;
    // Phi (X X^T) = Y X^T  <=>  (X X^T) Phi^T = X Y^T
    let phi_hat = chol.solve(&(&x * y.transpose())).transpose();
    let resid = &y - &phi_hat * &x;
    let t_eff = t_len - 1;
    let sigma_hat = symmetrize(&(&resid * resid.transpose())) / t_eff as f64;
    let gamma0_hat = symmetrize(&xxt) / t_eff as f64;
    Ok(Var1Fit {
        phi_hat,
        sigma_hat,
        gamma0_hat,
        t_eff,
        m,
        n,
    })
}

pub(crate) fn residuals_from(a: &DenseMatrix, b: &DenseMatrix, series: &MatrixSeries) -> Result<MatrixSeries> {
    if series.len() < 2 {
        return Err(MarError::precondition("residuals need at least 2 time points"));
    }
    if a.nrows() != series.m() || b.nrows() != series.n() {
        return Err(MarError::dim(format!(
            "coefficients are {}x{} / {}x{}, series is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            series.m(),
            series.n()
        )));
    }
    let b_t = b.transpose();
    let vals = series.values();
    let res = (1..vals.len()).map(|t| &vals[t] - a * &vals[t - 1] * &b_t).collect();
    Ok(MatrixSeries::from_parts_unchecked(
        res,
        series.row_labels().map(|l| l.to_vec()),
        series.col_labels().map(|l| l.to_vec()),
    ))
}

fn rss_of(res: &MatrixSeries) -> f64 {
    res.values().iter().map(|r| r.norm_squared()).sum()
}

fn energy(series: &MatrixSeries) -> f64 {
    series.values().iter().map(|x| x.norm_squared()).sum()
}

/// Residual covariance for PROJ/LSE fits: full when positive definite, then
/// diagonal, then identity (each fallback is recorded).
fn residual_covariance(res: &MatrixSeries, warnings: &mut Vec<String>) -> CovarianceSpec {
    let d = res.m() * res.n();
    let mut s = DenseMatrix::zeros(d, d);
    for r in res.values() {
        let v = vec(r);
        s += &v * v.transpose();
    }
    s = symmetrize(&s) / res.len() as f64;
    if let Ok(c) = CovarianceSpec::full(s.clone()) {
        return c;
    }
    warnings.push("residual covariance is singular; reporting its diagonal".into());
    if let Ok(c) = CovarianceSpec::diagonal(s.diagonal()) {
        return c;
    }
    warnings.push("residual variances are not all positive; reporting identity covariance".into());
    CovarianceSpec::Identity
}

fn finish(
    series: &MatrixSeries,
    a: DenseMatrix,
    b: DenseMatrix,
    cov: Option<CovarianceSpec>,
    method: Method,
    iterations: usize,
    objective_trace: Vec<f64>,
    converged: bool,
    mut warnings: Vec<String>,
) -> Result<MarFit> {
    let (a, b) = normalize_pair(&a, &b)?;
    let residuals = residuals_from(&a, &b, series)?;
    let cov = match cov {
        Some(c) => c,
        None => residual_covariance(&residuals, &mut warnings),
    };
    let model = MarModel::new(a, b, cov)?;
    let rho_product = match is_stationary(&model) {
        Ok((_, r)) => r,
        Err(e) => {
            warnings.push(format!("spectral radius unavailable: {e}"));
            f64::NAN
        }
    };
    if rho_product >= 1.0 {
        warnings.push(format!("estimate is not causal: rho(A)*rho(B) = {rho_product:.4}"));
    }
    Ok(MarFit {
        model,
        method,
        iterations,
        objective_trace,
        converged,
        residuals,
        rho_product,
        warnings,
    })
}

pub fn fit_proj(series: &MatrixSeries) -> Result<MarFit> {
    let var1 = fit_var1(series)?;
    fit_proj_from_var1(series, &var1)
}

/// PROJ estimate from an existing VAR(1) fit of the same series.
pub fn fit_proj_from_var1(series: &MatrixSeries, var1: &Var1Fit) -> Result<MarFit> {
    let list = nkp_project(&var1.phi_hat, series.m(), series.n(), 1)?;
    let term = list.terms.into_iter().next().expect("one term");
    let res = residuals_from(&term.a, &term.b, series)?;
    let rss = rss_of(&res);
    finish(series, term.a, term.b, None, Method::Proj, 1, vec![rss], true, Vec::new())
}

/// `A <- (sum X_t W_c B X_{t-1}^T)(sum X_{t-1} B^T W_c B X_{t-1}^T)^{-1}`,
/// with `W_c = I` for least squares and `Sigma_c^{-1}` for the MLE.
fn update_a(series: &MatrixSeries, b: &DenseMatrix, wc: &DenseMatrix) -> Option<DenseMatrix> {
    let m = series.m();
    let wb = wc * b;
    let btwb = b.transpose() * &wb;
    let mut num = DenseMatrix::zeros(m, m);
    let mut den = DenseMatrix::zeros(m, m);
    let vals = series.values();
    for t in 1..vals.len() {
        let prev = &vals[t - 1];
        num += &vals[t] * &wb * prev.transpose();
        den += prev * &btwb * prev.transpose();
    }
    solve_right(&num, &den)
}

/// `B <- (sum X_t^T W_r A X_{t-1})(sum X_{t-1}^T A^T W_r A X_{t-1})^{-1}`.
fn update_b(series: &MatrixSeries, a: &DenseMatrix, wr: &DenseMatrix) -> Option<DenseMatrix> {
    let n = series.n();
    let wa = wr * a;
    let atwa = a.transpose() * &wa;
    let mut num = DenseMatrix::zeros(n, n);
    let mut den = DenseMatrix::zeros(n, n);
    let vals = series.values();
    for t in 1..vals.len() {
        let prev = &vals[t - 1];
        num += vals[t].transpose() * &wa * prev;
        den += prev.transpose() * &atwa * prev;
    }
    solve_right(&num, &den)
}

/// `num * den^{-1}` for symmetric `den`.
fn solve_right(num: &DenseMatrix, den: &DenseMatrix) -> Option<DenseMatrix> {
    let den = symmetrize(den);
    let sol = match Cholesky::new(den.clone()) {
        Some(c) => c.solve(&num.transpose()),
        None => den.lu().solve(&num.transpose())?,
    };
    let out = sol.transpose();
    out.iter().all(|x| x.is_finite()).then_some(out)
}

/// Gradient conditions of the least squares objective, returned as
/// `(A sum X B^T B X^T - sum X_t B X_{t-1}^T, B sum X^T A^T A X - sum X_t^T A X_{t-1})`.
pub fn lse_gradient(series: &MatrixSeries, a: &DenseMatrix, b: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = (series.m(), series.n());
    let mut ga = DenseMatrix::zeros(m, m);
    let mut gb = DenseMatrix::zeros(n, n);
    let btb = b.transpose() * b;
    let ata = a.transpose() * a;
    let vals = series.values();
    for t in 1..vals.len() {
        let prev = &vals[t - 1];
        ga += a * prev * &btb * prev.transpose() - &vals[t] * b * prev.transpose();
        gb += b * prev.transpose() * &ata * prev - vals[t].transpose() * a * prev;
    }
    (ga, gb)
}

fn initial_pair(series: &MatrixSeries, opts: &FitOptions, warnings: &mut Vec<String>) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, n) = (series.m(), series.n());
    let identity = || normalize_pair(&DenseMatrix::identity(m, m), &DenseMatrix::identity(n, n));
    match &opts.init {
        Init::Identity => identity(),
        Init::Provided(a, b) => {
            if a.shape() != (m, m) || b.shape() != (n, n) {
                return Err(MarError::dim("initial (A, B) do not match the series dimensions"));
            }
            normalize_pair(a, b)
        }
        Init::FromProjection => {
            if series.len() < var1_min_len(series) {
                warnings.push(format!(
                    "series too short for the projection start (T={} < mn+2={}); starting from identity",
                    series.len(),
                    var1_min_len(series)
                ));
                return identity();
            }
            match fit_proj(series) {
                Ok(p) => Ok((p.a().clone(), p.b().clone())),
                Err(e) => {
                    warnings.push(format!("projection start failed ({e}); starting from identity"));
                    identity()
                }
            }
        }
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(cur.abs()).max(f64::MIN_POSITIVE)
}

pub fn fit_lse(series: &MatrixSeries, opts: &FitOptions) -> Result<MarFit> {
    opts.validate()?;
    series.require_len(3, "least squares")?;
    let mut warnings = Vec::new();
    let (a, b) = initial_pair(series, opts, &mut warnings)?;
    let (m, n) = (series.m(), series.n());
    let out = alternate(series, opts, a, b, &DenseMatrix::identity(m, m), &DenseMatrix::identity(n, n))?;
    finish(
        series,
        out.a,
        out.b,
        None,
        Method::Lse,
        out.iterations,
        out.trace,
        out.converged,
        warnings,
    )
}

struct Alternation {
    a: DenseMatrix,
    b: DenseMatrix,
    iterations: usize,
    trace: Vec<f64>,
    converged: bool,
}

/// Weighted alternating updates with fixed weights `sigma_r^{-1}`, `sigma_c^{-1}`.
/// The objective is `sum_t tr(W_r R_t W_c R_t^T)`.
fn alternate(
    series: &MatrixSeries,
    opts: &FitOptions,
    mut a: DenseMatrix,
    mut b: DenseMatrix,
    wr: &DenseMatrix,
    wc: &DenseMatrix,
) -> Result<Alternation> {
    let objective = |a: &DenseMatrix, b: &DenseMatrix| -> Result<f64> {
        let res = residuals_from(a, b, series)?;
        Ok(res.values().iter().map(|r| (wr * r * wc).dot(r)).sum())
    };
    let floor = EXACT_FIT_RATIO * energy(series);
    let mut trace = vec![objective(&a, &b)?];
    let mut converged = trace[0] <= floor;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        a = update_a(series, &b, wc)
            .ok_or_else(|| MarError::numeric(format!("singular A-update matrix at iteration {iterations}")))?;
        b = update_b(series, &a, wr)
            .ok_or_else(|| MarError::numeric(format!("singular B-update matrix at iteration {iterations}")))?;
        (a, b) = normalize_pair(&a, &b)?;
        let cur = objective(&a, &b)?;
        let prev = *trace.last().expect("nonempty");
        trace.push(cur);
        converged = cur <= floor || relative_change(prev, cur) < opts.rel_tol;
    }
    Ok(Alternation {
        a,
        b,
        iterations,
        trace,
        converged,
    })
}

/// Generalized least squares for `(A, B)` with the covariance held fixed at
/// `sigma_c ⊗ sigma_r`. With identity factors this is exactly [`fit_lse`].
pub fn fit_gls_fixed_cov(
    series: &MatrixSeries,
    opts: &FitOptions,
    sigma_c: &DenseMatrix,
    sigma_r: &DenseMatrix,
) -> Result<MarFit> {
    opts.validate()?;
    series.require_len(3, "generalized least squares")?;
    let cov = CovarianceSpec::kronecker(sigma_c.clone(), sigma_r.clone())?;
    cov.check_dims(series.m(), series.n())?;
    let wr = crate::kron::spd_inverse(sigma_r, "row covariance")?;
    let wc = crate::kron::spd_inverse(sigma_c, "column covariance")?;
    let mut warnings = Vec::new();
    let (a, b) = initial_pair(series, opts, &mut warnings)?;
    let out = alternate(series, opts, a, b, &wr, &wc)?;
    // The log-determinant terms are constant here; report the trace term.
    finish(
        series,
        out.a,
        out.b,
        Some(cov),
        Method::Mle,
        out.iterations,
        out.trace,
        out.converged,
        warnings,
    )
}

/// Cholesky-based inverse and log-determinant, adding a `1e-10 I` ridge once
/// if the factorization fails.
fn guarded_factor(
    s: &DenseMatrix,
    what: &str,
    cycle: usize,
    warnings: &mut Vec<String>,
) -> Result<(DenseMatrix, DenseMatrix, f64)> {
    let s = symmetrize(s);
    if let Some(c) = Cholesky::new(s.clone()) {
        let logdet = 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        return Ok((s, c.inverse(), logdet));
    }
    let ridged = &s + DenseMatrix::identity(s.nrows(), s.ncols()) * RIDGE;
    match Cholesky::new(ridged.clone()) {
        Some(c) => {
            warnings.push(format!("{what} lost positive definiteness at cycle {cycle}; added 1e-10 ridge"));
            let logdet = 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            Ok((ridged, c.inverse(), logdet))
        }
        None => Err(MarError::numeric(format!(
            "{what} is not positive definite at cycle {cycle}"
        ))),
    }
}

pub fn fit_mle(series: &MatrixSeries, opts: &FitOptions) -> Result<MarFit> {
    opts.validate()?;
    series.require_len(3, "maximum likelihood")?;
    let (m, n) = (series.m(), series.n());
    let t_eff = series.len() - 1;
    if m * t_eff <= n || n * t_eff <= m {
        return Err(MarError::precondition(format!(
            "covariance updates need m(T-1) > n and n(T-1) > m (m={m}, n={n}, T={})",
            series.len()
        )));
    }
    let mut warnings = Vec::new();
    let (mut a, mut b) = initial_pair(series, opts, &mut warnings)?;
    let mut sigma_c = DenseMatrix::identity(n, n);
    let mut sigma_r = DenseMatrix::identity(m, m);
    let mut wc = sigma_c.clone();
    let mut wr = sigma_r.clone();
    let (mut logdet_c, mut logdet_r) = (0.0, 0.0);

    let nll = |a: &DenseMatrix, b: &DenseMatrix, wr: &DenseMatrix, wc: &DenseMatrix, ldc: f64, ldr: f64| -> Result<f64> {
        let res = residuals_from(a, b, series)?;
        let quad: f64 = res.values().iter().map(|r| (wr * r * wc).dot(r)).sum();
        Ok((m * t_eff) as f64 * ldc + (n * t_eff) as f64 * ldr + quad)
    };

    let floor = EXACT_FIT_RATIO * energy(series);
    let mut trace = vec![nll(&a, &b, &wr, &wc, logdet_c, logdet_r)?];
    let mut converged = false;
    let mut cycle = 0;
    while !converged && cycle < opts.max_iter {
        cycle += 1;
        a = update_a(series, &b, &wc)
            .ok_or_else(|| MarError::numeric(format!("singular A-update matrix at cycle {cycle}")))?;
        b = update_b(series, &a, &wr)
            .ok_or_else(|| MarError::numeric(format!("singular B-update matrix at cycle {cycle}")))?;

        let res = residuals_from(&a, &b, series)?;
        if rss_of(&res) <= floor {
            return Err(MarError::numeric(format!(
                "residuals vanish at cycle {cycle}; the covariance MLE does not exist"
            )));
        }
        let mut sc = DenseMatrix::zeros(n, n);
        for r in res.values() {
            sc += r.transpose() * &wr * r;
        }
        (sigma_c, wc, logdet_c) = guarded_factor(&(sc / (m * t_eff) as f64), "column covariance", cycle, &mut warnings)?;
        let mut sr = DenseMatrix::zeros(m, m);
        for r in res.values() {
            sr += r * &wc * r.transpose();
        }
        (sigma_r, wr, logdet_r) = guarded_factor(&(sr / (n * t_eff) as f64), "row covariance", cycle, &mut warnings)?;

        (a, b) = normalize_pair(&a, &b)?;
        let s = sigma_r.norm();
        sigma_r /= s;
        wr *= s;
        sigma_c *= s;
        wc /= s;
        logdet_r -= m as f64 * s.ln();
        logdet_c += n as f64 * s.ln();

        let cur = nll(&a, &b, &wr, &wc, logdet_c, logdet_r)?;
        let prev = *trace.last().expect("nonempty");
        trace.push(cur);
        converged = relative_change(prev, cur) < opts.rel_tol;
    }
    let cov = CovarianceSpec::kronecker(sigma_c, sigma_r)?;
    finish(series, a, b, Some(cov), Method::Mle, cycle, trace, converged, warnings)
}

/// Dispatches on `method`.
pub fn fit(series: &MatrixSeries, method: Method, opts: &FitOptions) -> Result<MarFit> {
    match method {
        Method::Proj => fit_proj(series),
        Method::Lse => fit_lse(series, opts),
        Method::Mle => fit_mle(series, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::kron;
    use crate::model::{random_covariance, random_model, simulate, Setting};

    fn noiseless(model: &MarModel, t_len: usize, seed: u64) -> MatrixSeries {
        let mut x = crate::model::standard_normal_matrix(&mut crate::model::rng_for(seed, 99), model.m(), model.n());
        let mut vals = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            vals.push(x.clone());
            x = model.a() * &x * model.b().transpose();
        }
        MatrixSeries::new(vals).unwrap()
    }

    fn same_up_to_sign(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
        (x - y).amax().min((x + y).amax())
    }

    #[test]
    fn normalize_pair_examples() {
        let (a, b) = normalize_pair(&(DenseMatrix::identity(2, 2) * 2.0), &DenseMatrix::identity(2, 2)).unwrap();
        let r2 = 2f64.sqrt();
        assert!((a - DenseMatrix::identity(2, 2) / r2).amax() < 1e-15);
        assert!((b - DenseMatrix::identity(2, 2) * (2.0 * r2)).amax() < 1e-14);

        let a0 = DenseMatrix::identity(2, 2) / r2;
        let b0 = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (a1, b1) = normalize_pair(&a0, &b0).unwrap();
        assert_eq!(a1, a0);
        assert_eq!(b1, b0);

        assert!(matches!(
            normalize_pair(&DenseMatrix::zeros(2, 2), &b0),
            Err(MarError::Degenerate(_))
        ));
    }

    #[test]
    fn normalize_pair_preserves_kron() {
        let mut rng = crate::model::rng_for(1, 0);
        for _ in 0..20 {
            let a = crate::model::standard_normal_matrix(&mut rng, 3, 3);
            let b = crate::model::standard_normal_matrix(&mut rng, 2, 2);
            let (a1, b1) = normalize_pair(&a, &b).unwrap();
            assert!((kron(&b1, &a1) - kron(&b, &a)).amax() < 1e-14);
            assert!(sign_rule(&a1) > 0.0);
        }
    }

    #[test]
    fn var1_exact_recovery() {
        let model = random_model(2, 2, 0.9, 3).unwrap();
        let s = noiseless(&model, 12, 1);
        let v = fit_var1(&s).unwrap();
        assert!((&v.phi_hat - model.phi()).amax() < 1e-10);
        assert!(v.sigma_hat.amax() < 1e-18);
        assert!(crate::kron::is_symmetric(&v.gamma0_hat, 1e-12));
    }

    #[test]
    fn var1_scalar_reduction() {
        let model = random_model(1, 1, 0.5, 2).unwrap();
        let s = simulate(&model, 200, 10, 3).unwrap();
        let x: Vec<f64> = s.values().iter().map(|m| m[(0, 0)]).collect();
        let num: f64 = (1..x.len()).map(|t| x[t] * x[t - 1]).sum();
        let den: f64 = (1..x.len()).map(|t| x[t - 1] * x[t - 1]).sum();
        let v = fit_var1(&s).unwrap();
        assert!((v.phi_hat[(0, 0)] - num / den).abs() < 1e-14);
    }

    #[test]
    fn var1_white_noise_null() {
        let model = MarModel::unchecked(DenseMatrix::zeros(2, 2), DenseMatrix::zeros(2, 2), CovarianceSpec::Identity).unwrap();
        let s = simulate(&model, 10_000, 0, 4).unwrap();
        assert!(fit_var1(&s).unwrap().phi_hat.norm() < 0.1);
    }

    #[test]
    fn var1_too_short() {
        let model = random_model(2, 2, 0.5, 2).unwrap();
        let s = simulate(&model, 5, 0, 1).unwrap();
        let err = fit_var1(&s).unwrap_err();
        assert!(matches!(err, MarError::RankDeficient(_)));
        assert!(err.to_string().contains("mn=4"));
    }

    #[test]
    fn proj_exact_recovery() {
        let model = random_model(3, 2, 0.8, 5).unwrap();
        let s = noiseless(&model, 20, 2);
        let f = fit_proj(&s).unwrap();
        assert!(same_up_to_sign(f.a(), model.a()) < 1e-8);
        assert!(same_up_to_sign(f.b(), model.b()) < 1e-8);
        assert_eq!(f.iterations, 1);
        assert!(f.residuals.values().iter().all(|r| r.amax() < 1e-8));
    }

    #[test]
    fn proj_consistency_large_t() {
        let model = random_model(3, 2, 0.5, 6).unwrap();
        let s = simulate(&model, 5000, 500, 7).unwrap();
        let f = fit_proj(&s).unwrap();
        assert!((f.model.phi() - model.phi()).norm() < 0.1);
    }

    #[test]
    fn lse_noiseless_from_identity() {
        // Scaled rotations keep the trajectory full rank, so the exact fit is
        // well identified.
        let mut rng = crate::model::rng_for(8, 7);
        let q1 = crate::model::haar_orthonormal(&mut rng, 3);
        let q2 = crate::model::haar_orthonormal(&mut rng, 2);
        let model = MarModel::new(&q1 / q1.norm(), q2 * (0.95 * 3f64.sqrt()), CovarianceSpec::Identity).unwrap();
        let s = noiseless(&model, 30, 3);
        let opts = FitOptions {
            init: Init::Identity,
            ..FitOptions::default()
        };
        let f = fit_lse(&s, &opts).unwrap();
        assert!(f.converged, "trace {:?}", f.objective_trace);
        assert!(*f.objective_trace.last().unwrap() < 1e-16);
        assert!(same_up_to_sign(f.a(), model.a()) < 1e-6);
        assert!(same_up_to_sign(f.b(), model.b()) < 1e-6);
    }

    #[test]
    fn lse_fixed_point_at_truth() {
        let model = random_model(3, 2, 0.8, 9).unwrap();
        let s = noiseless(&model, 30, 4);
        let a = update_a(&s, model.b(), &DenseMatrix::identity(2, 2)).unwrap();
        assert!((&a - model.a()).amax() < 1e-12);
        let b = update_b(&s, model.a(), &DenseMatrix::identity(3, 3)).unwrap();
        assert!((&b - model.b()).amax() < 1e-12);
    }

    #[test]
    fn lse_trace_nonincreasing_and_gradient_small() {
        let model = random_model(3, 2, 0.5, 10).unwrap();
        let s = simulate(&model, 400, 100, 11).unwrap();
        let f = fit_lse(&s, &FitOptions::default()).unwrap();
        assert!(f.converged);
        for w in f.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs());
        }
        let (ga, gb) = lse_gradient(&s, f.a(), f.b());
        let scale = energy(&s);
        assert!(ga.amax() < 1e-6 * scale && gb.amax() < 1e-6 * scale);
        let rss: f64 = f.residuals.values().iter().map(|r| r.norm_squared()).sum();
        assert!((rss - f.objective_trace.last().unwrap()).abs() <= 1e-10 * rss);
    }

    #[test]
    fn mle_with_identity_cov_reproduces_lse() {
        let model = random_model(3, 2, 0.5, 12).unwrap();
        let s = simulate(&model, 300, 100, 13).unwrap();
        let opts = FitOptions::default();
        let lse = fit_lse(&s, &opts).unwrap();
        let gls = fit_gls_fixed_cov(&s, &opts, &DenseMatrix::identity(2, 2), &DenseMatrix::identity(3, 3)).unwrap();
        assert_eq!(lse.objective_trace.len(), gls.objective_trace.len());
        for (x, y) in lse.objective_trace.iter().zip(&gls.objective_trace) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
        assert!((lse.a() - gls.a()).amax() < 1e-12);
        assert!((lse.b() - gls.b()).amax() < 1e-12);
    }

    #[test]
    fn mle_trace_nonincreasing_and_kronecker_cov() {
        let model = random_model(3, 2, 0.5, 14)
            .unwrap()
            .with_cov(random_covariance(Setting::III, 3, 2, 14).unwrap())
            .unwrap();
        let s = simulate(&model, 400, 100, 15).unwrap();
        let f = fit_mle(&s, &FitOptions::default()).unwrap();
        assert!(f.converged);
        for w in f.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        let CovarianceSpec::Kronecker { sigma_r, .. } = f.model.cov() else {
            panic!("MLE must report Kronecker covariance");
        };
        assert!((sigma_r.norm() - 1.0).abs() < 1e-10);
        assert!((f.a().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mle_and_lse_agree_under_identity_cov() {
        let model = random_model(3, 2, 0.5, 16).unwrap();
        let s = simulate(&model, 10_000, 200, 17).unwrap();
        let lse = fit_lse(&s, &FitOptions::default()).unwrap();
        let mle = fit_mle(&s, &FitOptions::default()).unwrap();
        assert!((lse.model.phi() - mle.model.phi()).norm() < 0.05);
    }

    #[test]
    fn mle_rejects_degenerate_sizes() {
        let model = random_model(1, 3, 0.5, 18).unwrap();
        let s = simulate(&model, 3, 0, 1).unwrap();
        // m(T-1) = 2 <= n = 3
        assert!(matches!(fit_mle(&s, &FitOptions::default()), Err(MarError::Precondition(_))));
    }

    #[test]
    fn transposed_data_swaps_roles() {
        let model = random_model(3, 2, 0.8, 19).unwrap();
        let s = noiseless(&model, 30, 5);
        let f = fit_lse(&s, &FitOptions::default()).unwrap();
        let ft = fit_lse(&s.transposed(), &FitOptions::default()).unwrap();
        // X^T_t = B X^T_{t-1} A^T, so the transposed fit has roles swapped.
        assert!((kron(f.a(), f.b()) - kron(ft.b(), ft.a())).amax() < 1e-8);
    }

    #[test]
    fn short_series_falls_back_to_identity_start() {
        let model = random_model(3, 2, 0.5, 20).unwrap();
        let s = simulate(&model, 6, 50, 2).unwrap();
        let f = fit_lse(&s, &FitOptions::default()).unwrap();
        assert!(f.warnings.iter().any(|w| w.contains("identity")));
    }

    #[test]
    fn options_validation() {
        let s = simulate(&random_model(2, 2, 0.5, 1).unwrap(), 20, 0, 1).unwrap();
        let bad = FitOptions {
            max_iter: 0,
            ..FitOptions::default()
        };
        assert!(fit_lse(&s, &bad).is_err());
        let bad = FitOptions {
            rel_tol: 0.0,
            ..FitOptions::default()
        };
        assert!(fit_mle(&s, &bad).is_err());
        assert_eq!("mles".parse::<Method>().unwrap(), Method::Mle);
    }
}
