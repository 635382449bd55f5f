use super::{require_stationary, CovarianceSpec, MarModel};
use crate::error::{MarError, Result};
use crate::kron::{DenseMatrix, DenseVector};

/// Row and column response vectors; only available for Kronecker covariance.
#[derive(Debug, Clone)]
pub struct FactoredIrf {
    /// `A^k Sigma_r[:, i]`, carrying the shock scaling.
    pub row_resp: Vec<DenseVector>,
    /// `B^k Sigma_c[:, j]`.
    pub col_resp: Vec<DenseVector>,
}

/// Shock-first orthogonal impulse responses to a one standard deviation
/// innovation in entry `(shock_row, shock_col)` (0-based).
#[derive(Debug, Clone)]
pub struct IrfResult {
    pub shock_row: usize,
    pub shock_col: usize,
    pub horizon: usize,
    /// `responses[k]` is the `m x n` response at lag `k`.
    pub responses: Vec<DenseMatrix>,
    /// Running sums of `responses`.
    pub accumulated: Vec<DenseMatrix>,
    pub factored: Option<FactoredIrf>,
}

/// Computes `F(k) = unvec((B^k ⊗ A^k) Sigma[:, c]) / sqrt(Sigma[c, c])` with
/// `c = m * shock_col + shock_row`, for `k = 0..=horizon`.
pub fn irf_s1(model: &MarModel, shock_row: usize, shock_col: usize, horizon: usize) -> Result<IrfResult> {
    let (m, n) = (model.m(), model.n());
    if shock_row >= m || shock_col >= n {
        return Err(MarError::Index(format!(
            "shock ({}, {}) outside a {m}x{n} model (1-based)",
            shock_row + 1,
            shock_col + 1
        )));
    }
    require_stationary(model, "impulse response")?;
    let (a, b) = (model.a(), model.b());
    let b_t = b.transpose();

    let c = m * shock_col + shock_row;
    let sigma = model.sigma();
    let sd = sigma[(c, c)].sqrt();
    let shock = DenseMatrix::from_column_slice(m, n, (sigma.column(c) / sd).as_slice());

    // (B^k ⊗ A^k) vec(S) = vec(A^k S (B^k)^T)
    let mut responses = Vec::with_capacity(horizon + 1);
    let mut accumulated = Vec::with_capacity(horizon + 1);
    let mut current = shock;
    let mut acc = DenseMatrix::zeros(m, n);
    for k in 0..=horizon {
        if k > 0 {
            current = a * &current * &b_t;
        }
        acc += &current;
        responses.push(current.clone());
        accumulated.push(acc.clone());
    }

    let factored = match model.cov() {
        CovarianceSpec::Kronecker { sigma_c, sigma_r } => {
            let mut row = sigma_r.column(shock_row) / sd;
            let mut col = sigma_c.column(shock_col).into_owned();
            let mut row_resp = Vec::with_capacity(horizon + 1);
            let mut col_resp = Vec::with_capacity(horizon + 1);
            for k in 0..=horizon {
                if k > 0 {
                    row = a * &row;
                    col = b * &col;
                }
                row_resp.push(row.clone());
                col_resp.push(col.clone());
            }
            Some(FactoredIrf { row_resp, col_resp })
        }
        _ => None,
    };

    Ok(IrfResult {
        shock_row,
        shock_col,
        horizon,
        responses,
        accumulated,
        factored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::{kron, mat_pow, unvec, vec};
    use crate::model::{random_covariance, random_model, Setting};

    #[test]
    fn identity_cov_lag_zero_is_elementary() {
        let model = random_model(3, 2, 0.5, 1).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let r = irf_s1(&model, i, j, 0).unwrap();
                let mut e = DenseMatrix::zeros(3, 2);
                e[(i, j)] = 1.0;
                assert_eq!(r.responses[0], e);
                assert!(r.factored.is_none());
            }
        }
    }

    #[test]
    fn kronecker_cov_is_rank_one() {
        let model = random_model(3, 2, 0.5, 2)
            .unwrap()
            .with_cov(random_covariance(Setting::III, 3, 2, 2).unwrap())
            .unwrap();
        let r = irf_s1(&model, 1, 0, 20).unwrap();
        let f = r.factored.as_ref().unwrap();
        for k in 0..=20 {
            let outer = &f.row_resp[k] * f.col_resp[k].transpose();
            assert!((&r.responses[k] - outer).amax() < 1e-12);
        }
    }

    #[test]
    fn matches_vectorized_formula_and_accumulates() {
        let model = random_model(2, 3, 0.7, 3)
            .unwrap()
            .with_cov(random_covariance(Setting::II, 2, 3, 3).unwrap())
            .unwrap();
        let (i, j, horizon) = (1, 2, 6);
        let r = irf_s1(&model, i, j, horizon).unwrap();
        let sigma = model.sigma();
        let c = 2 * j + i;
        let mut acc = DenseMatrix::zeros(2, 3);
        for k in 0..=horizon {
            let phi_k = kron(&mat_pow(model.b(), k), &mat_pow(model.a(), k));
            let v = phi_k * sigma.column(c) / sigma[(c, c)].sqrt();
            let expect = unvec(&v, 2, 3).unwrap();
            assert!((&r.responses[k] - &expect).amax() < 1e-12);
            acc += expect;
            assert!((&r.accumulated[k] - &acc).amax() < 1e-12);
        }
        assert!((vec(&r.responses[0])[c] - sigma[(c, c)].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn responses_decay_geometrically() {
        let model = random_model(3, 2, 0.5, 4).unwrap();
        let r = irf_s1(&model, 0, 0, 40).unwrap();
        let norms: Vec<f64> = r.responses.iter().map(|x| x.norm()).collect();
        // Fit c in ||F(k)|| <= c * rho^k * ||F(0)|| from the worst lag, then
        // require the tail to shrink at the spectral rate.
        let c = (0..=40).map(|k| norms[k] / (0.5f64.powi(k as i32) * norms[0])).fold(0.0, f64::max);
        assert!(c.is_finite() && c < 1e3, "growth constant {c}");
        assert!(norms[40] < 1e-6 * norms[0]);
    }

    #[test]
    fn out_of_range_shock() {
        let model = random_model(2, 2, 0.5, 5).unwrap();
        assert!(matches!(irf_s1(&model, 2, 0, 3), Err(MarError::Index(_))));
        assert!(matches!(irf_s1(&model, 0, 2, 3), Err(MarError::Index(_))));
    }
}
