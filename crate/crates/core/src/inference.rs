//! Plug-in asymptotic covariances of the three MAR estimators, marginal
//! confidence intervals, and the Kronecker-structure specification test.
//!
//! Every population expectation is replaced by a sample average at the
//! fitted parameters. The regressor `W_t` pairs `X_{t-1}` with the residual
//! `R_t`, for `t = 2..T`, and all scalings use `T_used = T - 1`.
//!
//! Stacked coefficient layouts differ by method: PROJ reports
//! `(vec A, vec B)`, LSE and MLEs report `(vec A, vec B^T)`.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{MarError, Result};
use crate::estimators::{fit_var1, fit_proj_from_var1, MarFit, Method, Var1Fit};
use crate::kron::{
    general_inverse, kron, nkp_project, permute_symmetric, pinv_rank, rearrange, rearrange_permutation, spd_inverse,
    sorted_svd, symmetrize, vec, DenseMatrix, DenseVector,
};
use crate::model::{CovarianceSpec, MatrixSeries};

#[derive(Debug, Clone)]
pub struct AsymptoticCovariance {
    pub method: Method,
    /// Covariance of `sqrt(T) vec(rearranged Phi_hat)` for PROJ
    /// (`m^2 n^2` square), or of `sqrt(T)` times the stacked coefficients
    /// for LSE/MLEs (`m^2 + n^2` square).
    pub xi: DenseMatrix,
    /// Covariance of the stacked coefficient estimate.
    pub stacked_cov: DenseMatrix,
    /// Covariance of `vec(B) ⊗ vec(A)` (PROJ) or `vec(B^T) ⊗ vec(A)`.
    pub kron_cov: DenseMatrix,
    pub t_used: usize,
}

/// Stacked point estimate in the layout matching [`AsymptoticCovariance`].
pub fn stacked_estimate(fit: &MarFit) -> DenseVector {
    let a = vec(fit.a());
    let b = match fit.method {
        Method::Proj => vec(fit.b()),
        Method::Lse | Method::Mle => vec(&fit.b().transpose()),
    };
    concat(&a, &b)
}

/// Kronecker point estimate in the layout matching [`AsymptoticCovariance`].
pub fn kron_estimate(fit: &MarFit) -> DenseVector {
    let a = vec(fit.a());
    let b = match fit.method {
        Method::Proj => vec(fit.b()),
        Method::Lse | Method::Mle => vec(&fit.b().transpose()),
    };
    kron_vec(&b, &a)
}

pub(crate) fn concat(a: &DenseVector, b: &DenseVector) -> DenseVector {
    DenseVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

pub(crate) fn kron_vec(b: &DenseVector, a: &DenseVector) -> DenseVector {
    DenseVector::from_iterator(a.len() * b.len(), b.iter().flat_map(|&bj| a.iter().map(move |&ai| bj * ai)))
}

fn require_method(fit: &MarFit, expected: Method) -> Result<()> {
    if fit.method != expected {
        return Err(MarError::precondition(format!(
            "expected a {expected} fit, got {}",
            fit.method
        )));
    }
    Ok(())
}

/// `Xi_1 = P (Gamma_0^{-1} ⊗ Sigma) P^T`, the covariance of the rearranged
/// VAR(1) estimate, with `P` the rearrangement permutation.
pub fn xi_proj(var1: &Var1Fit) -> Result<DenseMatrix> {
    let g_inv = spd_inverse(&var1.gamma0_hat, "sample covariance Gamma0")?;
    let base = kron(&g_inv, &var1.sigma_hat);
    let pi = rearrange_permutation(var1.m, var1.n);
    Ok(permute_symmetric(&base, &pi))
}

fn row(v: &DenseVector) -> DenseMatrix {
    DenseMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// `(V_0, V_1)` of the projection estimator's delta method.
fn proj_jacobians(a: &DenseMatrix, b: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m2, n2) = (a.len(), b.len());
    let alpha = vec(a);
    let b_norm = b.norm();
    let beta1 = vec(b) / b_norm;
    let aa = &alpha * alpha.transpose();
    let bb = &beta1 * beta1.transpose();
    let i_m2 = DenseMatrix::identity(m2, m2);
    let i_n2 = DenseMatrix::identity(n2, n2);

    let top = kron(&row(&beta1), &(&i_m2 - &aa)) / b_norm;
    let bottom = kron(&i_n2, &row(&alpha));
    let mut v0 = DenseMatrix::zeros(m2 + n2, m2 * n2);
    v0.rows_mut(0, m2).copy_from(&top);
    v0.rows_mut(m2, n2).copy_from(&bottom);

    let v1 = kron(&bb, &i_m2) + kron(&i_n2, &aa) - kron(&bb, &aa);
    (v0, v1)
}

pub fn asymp_cov_proj(fit: &MarFit, var1: &Var1Fit) -> Result<AsymptoticCovariance> {
    require_method(fit, Method::Proj)?;
    if (var1.m, var1.n) != (fit.model.m(), fit.model.n()) {
        return Err(MarError::dim("VAR(1) fit and PROJ fit have different dimensions"));
    }
    let xi = xi_proj(var1)?;
    let (v0, v1) = proj_jacobians(fit.a(), fit.b());
    let t = var1.t_eff as f64;
    Ok(AsymptoticCovariance {
        method: Method::Proj,
        stacked_cov: symmetrize(&(&v0 * &xi * v0.transpose())) / t,
        kron_cov: symmetrize(&(&v1 * &xi * v1.transpose())) / t,
        xi,
        t_used: var1.t_eff,
    })
}

/// Regressors `W_t` (`(m^2 + n^2) x mn`) built from `X_{t-1}`, `t = 2..T`,
/// with `W_t^T = [(B X^T) ⊗ I_m, I_n ⊗ (A X)]`.
fn regressors(a: &DenseMatrix, b: &DenseMatrix, series: &MatrixSeries) -> Vec<DenseMatrix> {
    let (m, n) = (series.m(), series.n());
    let i_m = DenseMatrix::identity(m, m);
    let i_n = DenseMatrix::identity(n, n);
    let vals = series.values();
    (1..vals.len())
        .map(|t| {
            let x = &vals[t - 1];
            let left = kron(&(b * x.transpose()), &i_m);
            let right = kron(&i_n, &(a * x));
            let mut wt = DenseMatrix::zeros(m * n, m * m + n * n);
            wt.columns_mut(0, m * m).copy_from(&left);
            wt.columns_mut(m * m, n * n).copy_from(&right);
            wt.transpose()
        })
        .collect()
}

fn gamma_vec(a: &DenseMatrix, n: usize) -> DenseVector {
    let alpha = vec(a);
    concat(&alpha, &DenseVector::zeros(n * n))
}

/// Average of `W_t S W_t^T`.
fn avg_quadratic(ws: &[DenseMatrix], s: &DenseMatrix) -> DenseMatrix {
    let k = ws[0].nrows();
    let mut acc = DenseMatrix::zeros(k, k);
    for w in ws {
        acc += w * s * w.transpose();
    }
    symmetrize(&acc) / ws.len() as f64
}

fn sandwich_inverse(h: &DenseMatrix) -> Result<DenseMatrix> {
    spd_inverse(h, "H").or_else(|_| general_inverse(h, "H"))
}

/// `Xi_2 = H^{-1} E(W Sigma W^T) H^{-1}` with `H = E(W W^T) + gamma gamma^T`.
pub fn xi_lse(a: &DenseMatrix, b: &DenseMatrix, series: &MatrixSeries, sigma: &DenseMatrix) -> Result<DenseMatrix> {
    let ws = regressors(a, b, series);
    let d = series.m() * series.n();
    let gamma = gamma_vec(a, series.n());
    let h = avg_quadratic(&ws, &DenseMatrix::identity(d, d)) + &gamma * gamma.transpose();
    let h_inv = sandwich_inverse(&h)?;
    let meat = avg_quadratic(&ws, sigma);
    Ok(symmetrize(&(&h_inv * meat * &h_inv)))
}

/// `Xi_3 = H~^{-1} E(W Sigma^{-1} W^T) H~^{-1}` with
/// `H~ = E(W Sigma^{-1} W^T) + gamma gamma^T`.
pub fn xi_mle(a: &DenseMatrix, b: &DenseMatrix, series: &MatrixSeries, sigma_inv: &DenseMatrix) -> Result<DenseMatrix> {
    let ws = regressors(a, b, series);
    let gamma = gamma_vec(a, series.n());
    let meat = avg_quadratic(&ws, sigma_inv);
    let h = &meat + &gamma * gamma.transpose();
    let h_inv = sandwich_inverse(&h)?;
    Ok(symmetrize(&(&h_inv * meat * &h_inv)))
}

/// `E(W W^T) + gamma gamma^T` at the plug-in values.
pub fn h_matrix(a: &DenseMatrix, b: &DenseMatrix, series: &MatrixSeries) -> DenseMatrix {
    let ws = regressors(a, b, series);
    let d = series.m() * series.n();
    let gamma = gamma_vec(a, series.n());
    avg_quadratic(&ws, &DenseMatrix::identity(d, d)) + &gamma * gamma.transpose()
}

/// `V = [beta ⊗ I, I ⊗ alpha]` with `beta = vec(B^T)`.
fn lse_jacobian(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (m2, n2) = (a.len(), b.len());
    let alpha = vec(a);
    let beta = vec(&b.transpose());
    let left = kron(&DenseMatrix::from_column_slice(n2, 1, beta.as_slice()), &DenseMatrix::identity(m2, m2));
    let right = kron(&DenseMatrix::identity(n2, n2), &DenseMatrix::from_column_slice(m2, 1, alpha.as_slice()));
    let mut v = DenseMatrix::zeros(m2 * n2, m2 + n2);
    v.columns_mut(0, m2).copy_from(&left);
    v.columns_mut(m2, n2).copy_from(&right);
    v
}

fn residual_cov(fit: &MarFit) -> DenseMatrix {
    let d = fit.model.m() * fit.model.n();
    let mut s = DenseMatrix::zeros(d, d);
    for r in fit.residuals.values() {
        let v = vec(r);
        s += &v * v.transpose();
    }
    symmetrize(&s) / fit.residuals.len() as f64
}

fn check_series(fit: &MarFit, series: &MatrixSeries) -> Result<usize> {
    if (series.m(), series.n()) != (fit.model.m(), fit.model.n()) {
        return Err(MarError::dim("fit and series have different dimensions"));
    }
    series.require_len(3, "asymptotic covariance")?;
    Ok(series.len() - 1)
}

fn from_xi(method: Method, fit: &MarFit, xi: DenseMatrix, t_used: usize) -> AsymptoticCovariance {
    let v = lse_jacobian(fit.a(), fit.b());
    let t = t_used as f64;
    AsymptoticCovariance {
        method,
        stacked_cov: &xi / t,
        kron_cov: symmetrize(&(&v * &xi * v.transpose())) / t,
        xi,
        t_used,
    }
}

pub fn asymp_cov_lse(fit: &MarFit, series: &MatrixSeries) -> Result<AsymptoticCovariance> {
    require_method(fit, Method::Lse)?;
    let t_used = check_series(fit, series)?;
    let sigma = residual_cov(fit);
    let xi = xi_lse(fit.a(), fit.b(), series, &sigma)?;
    Ok(from_xi(Method::Lse, fit, xi, t_used))
}

pub fn asymp_cov_mle(fit: &MarFit, series: &MatrixSeries) -> Result<AsymptoticCovariance> {
    require_method(fit, Method::Mle)?;
    let t_used = check_series(fit, series)?;
    let CovarianceSpec::Kronecker { sigma_c, sigma_r } = fit.model.cov() else {
        return Err(MarError::precondition("MLE covariance must have Kronecker form"));
    };
    let sigma_inv = kron(
        &spd_inverse(sigma_c, "column covariance")?,
        &spd_inverse(sigma_r, "row covariance")?,
    );
    let xi = xi_mle(fit.a(), fit.b(), series, &sigma_inv)?;
    Ok(from_xi(Method::Mle, fit, xi, t_used))
}

/// Asymptotic covariance for any MAR fit; PROJ refits the VAR(1).
pub fn asymp_cov(fit: &MarFit, series: &MatrixSeries) -> Result<AsymptoticCovariance> {
    match fit.method {
        Method::Proj => asymp_cov_proj(fit, &fit_var1(series)?),
        Method::Lse => asymp_cov_lse(fit, series),
        Method::Mle => asymp_cov_mle(fit, series),
    }
}

#[derive(Debug, Clone)]
pub struct ConfidenceIntervals {
    pub level: f64,
    pub estimate: DenseVector,
    pub stderr: DenseVector,
    pub lower: DenseVector,
    pub upper: DenseVector,
    pub kron_estimate: DenseVector,
    pub kron_stderr: DenseVector,
    pub kron_lower: DenseVector,
    pub kron_upper: DenseVector,
}

fn stderrs(cov: &DenseMatrix) -> Result<DenseVector> {
    let diag = cov.diagonal();
    let tol = -1e-8 * diag.amax().max(1.0);
    diag.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < tol {
                Err(MarError::numeric(format!("negative variance {v} at entry {i}")))
            } else {
                Ok(v.max(0.0).sqrt())
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(DenseVector::from_vec)
}

/// Standard normal quantile `z_{(1 + level) / 2}`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MarError::precondition(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf((1.0 + level) / 2.0))
}

/// Marginal intervals `estimate ± z sqrt(diag(cov))` for both layouts.
pub fn confidence_intervals(
    estimate: &DenseVector,
    kron_estimate: &DenseVector,
    cov: &AsymptoticCovariance,
    level: f64,
) -> Result<ConfidenceIntervals> {
    let z = normal_critical_value(level)?;
    if estimate.len() != cov.stacked_cov.nrows() || kron_estimate.len() != cov.kron_cov.nrows() {
        return Err(MarError::dim("point estimates do not match the covariance layout"));
    }
    let se = stderrs(&cov.stacked_cov)?;
    let kse = stderrs(&cov.kron_cov)?;
    Ok(ConfidenceIntervals {
        level,
        lower: estimate - &se * z,
        upper: estimate + &se * z,
        estimate: estimate.clone(),
        stderr: se,
        kron_lower: kron_estimate - &kse * z,
        kron_upper: kron_estimate + &kse * z,
        kron_estimate: kron_estimate.clone(),
        kron_stderr: kse,
    })
}

/// Intervals for a fit's own point estimates.
pub fn fit_intervals(fit: &MarFit, cov: &AsymptoticCovariance, level: f64) -> Result<ConfidenceIntervals> {
    confidence_intervals(&stacked_estimate(fit), &kron_estimate(fit), cov, level)
}

#[derive(Debug, Clone)]
pub struct SpecTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Rearranged VAR(1) estimate minus its rank-one projection (`m^2 x n^2`).
    pub d_hat: DenseMatrix,
    /// `(I - beta1 beta1^T) ⊗ (I - alpha alpha^T)`.
    pub p_hat: DenseMatrix,
    pub t_used: usize,
    /// Numerical rank of `P Xi P` when it differs from `df`.
    pub rank_warning: Option<String>,
}

/// Tests `H0: Phi = B ⊗ A` against an unrestricted VAR(1). The statistic
/// is asymptotically chi-square with `(m^2 - 1)(n^2 - 1)` degrees of freedom.
pub fn specification_test(series: &MatrixSeries) -> Result<SpecTestResult> {
    let var1 = fit_var1(series)?;
    spec_test_from_var1(series, &var1)
}

pub(crate) fn spec_test_from_var1(series: &MatrixSeries, var1: &Var1Fit) -> Result<SpecTestResult> {
    let (m, n) = (series.m(), series.n());
    let xi = xi_proj(var1)?;
    let list = nkp_project(&var1.phi_hat, m, n, 1)?;
    let term = &list.terms[0];
    let alpha = vec(&term.a);
    let beta1 = vec(&term.b) / term.b.norm();
    let d_hat = rearrange(&var1.phi_hat, m, n)? - &alpha * vec(&term.b).transpose();
    let p_hat = kron(
        &(DenseMatrix::identity(n * n, n * n) - &beta1 * beta1.transpose()),
        &(DenseMatrix::identity(m * m, m * m) - &alpha * alpha.transpose()),
    );
    let df = (m * m - 1) * (n * n - 1);
    let t_used = var1.t_eff;
    if df == 0 {
        return Ok(SpecTestResult {
            statistic: 0.0,
            df,
            p_value: 1.0,
            d_hat,
            p_hat,
            t_used,
            rank_warning: Some("zero degrees of freedom: every coefficient is a Kronecker product".into()),
        });
    }
    let middle = symmetrize(&(&p_hat * &xi * &p_hat));
    let svd = sorted_svd(&middle)?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = crate::kron::default_pinv_tol(&middle, smax);
    let numeric_rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let rank_warning = (numeric_rank != df)
        .then(|| format!("P Xi P has numerical rank {numeric_rank}, expected {df}"));
    let pinv = pinv_rank(&middle, df)?;
    let d = vec(&d_hat);
    let statistic = (t_used as f64 * d.dot(&(&pinv * &d))).max(0.0);
    let chi2 = ChiSquared::new(df as f64).map_err(|e| MarError::numeric(e.to_string()))?;
    Ok(SpecTestResult {
        statistic,
        df,
        p_value: chi2.sf(statistic).clamp(0.0, 1.0),
        d_hat,
        p_hat,
        t_used,
        rank_warning,
    })
}

/// PROJ fit together with its asymptotic covariance.
pub fn proj_with_cov(series: &MatrixSeries) -> Result<(MarFit, AsymptoticCovariance)> {
    let var1 = fit_var1(series)?;
    let fit = fit_proj_from_var1(series, &var1)?;
    let cov = asymp_cov_proj(&fit, &var1)?;
    Ok((fit, cov))
}
