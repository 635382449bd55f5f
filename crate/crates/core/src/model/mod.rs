//! MAR(1) model `X_t = A X_{t-1} B^T + E_t`: representation, causality,
//! simulation, population autocovariances and impulse responses.

mod irf;
mod series;
mod simulate;

pub use irf::{irf_s1, FactoredIrf, IrfResult};
pub use series::MatrixSeries;
pub use simulate::{simulate, simulate_var1, DEFAULT_BURN_IN};

use std::fmt;
use std::str::FromStr;

use nalgebra::linalg::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{MarError, Result};
use crate::estimators::normalize_pair;
use crate::kron::{ensure_finite, is_symmetric, kron, spectral_radius, DenseMatrix, DenseVector};

/// Relative increment at which the autocovariance series is truncated.
pub const DEFAULT_AUTOCOV_TOL: f64 = 1e-12;
const AUTOCOV_MAX_TERMS: usize = 10_000;

// Distinct ChaCha streams keep model, covariance and data draws independent
// even when they share a seed.
pub(crate) const STREAM_DATA: u64 = 0;
pub(crate) const STREAM_MODEL: u64 = 11;
pub(crate) const STREAM_COV: u64 = 12;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn standard_normal_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DenseMatrix {
    // from_fn walks column-major, which fixes the draw order.
    DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Covariance of `vec(E_t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    Identity,
    /// Variances of the `mn` entries of `vec(E_t)`.
    Diagonal(DenseVector),
    Full(DenseMatrix),
    /// `Sigma = sigma_c ⊗ sigma_r`, with `sigma_r` at unit Frobenius norm.
    Kronecker {
        sigma_c: DenseMatrix,
        sigma_r: DenseMatrix,
    },
}

fn check_spd(m: &DenseMatrix, what: &str) -> Result<()> {
    ensure_finite(m, what)?;
    let scale = m.amax().max(1.0);
    if !is_symmetric(m, 1e-12 * scale) {
        return Err(MarError::Domain(format!("{what} is not symmetric")));
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(MarError::Domain(format!("{what} is not positive definite")));
    }
    Ok(())
}

impl CovarianceSpec {
    pub fn diagonal(variances: DenseVector) -> Result<Self> {
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(MarError::Domain("diagonal variances must be positive and finite".into()));
        }
        Ok(CovarianceSpec::Diagonal(variances))
    }

    pub fn full(sigma: DenseMatrix) -> Result<Self> {
        check_spd(&sigma, "covariance")?;
        Ok(CovarianceSpec::Full(sigma))
    }

    /// Builds `sigma_c ⊗ sigma_r`, rescaling so `||sigma_r||_F = 1`.
    pub fn kronecker(sigma_c: DenseMatrix, sigma_r: DenseMatrix) -> Result<Self> {
        check_spd(&sigma_c, "column covariance")?;
        check_spd(&sigma_r, "row covariance")?;
        let s = sigma_r.norm();
        Ok(CovarianceSpec::Kronecker {
            sigma_c: sigma_c * s,
            sigma_r: sigma_r / s,
        })
    }

    pub fn check_dims(&self, m: usize, n: usize) -> Result<()> {
        let ok = match self {
            CovarianceSpec::Identity => true,
            CovarianceSpec::Diagonal(v) => v.len() == m * n,
            CovarianceSpec::Full(s) => s.shape() == (m * n, m * n),
            CovarianceSpec::Kronecker { sigma_c, sigma_r } => {
                sigma_c.shape() == (n, n) && sigma_r.shape() == (m, m)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(MarError::dim(format!("covariance does not match an {m}x{n} model")))
        }
    }

    /// Dense `mn x mn` covariance of `vec(E_t)`.
    pub fn dense(&self, m: usize, n: usize) -> DenseMatrix {
        match self {
            CovarianceSpec::Identity => DenseMatrix::identity(m * n, m * n),
            CovarianceSpec::Diagonal(v) => DenseMatrix::from_diagonal(v),
            CovarianceSpec::Full(s) => s.clone(),
            CovarianceSpec::Kronecker { sigma_c, sigma_r } => kron(sigma_c, sigma_r),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CovarianceSpec::Identity => "identity",
            CovarianceSpec::Diagonal(_) => "diagonal",
            CovarianceSpec::Full(_) => "full",
            CovarianceSpec::Kronecker { .. } => "kronecker",
        }
    }
}

/// Coefficient pair `(A, B)` with error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarModel {
    a: DenseMatrix,
    b: DenseMatrix,
    cov: CovarianceSpec,
}

impl MarModel {
    /// Requires `||A||_F = 1` within `1e-10`.
    pub fn new(a: DenseMatrix, b: DenseMatrix, cov: CovarianceSpec) -> Result<Self> {
        let model = Self::unchecked(a, b, cov)?;
        if (model.a.norm() - 1.0).abs() > 1e-10 {
            return Err(MarError::precondition(format!(
                "A must have unit Frobenius norm, got {}",
                model.a.norm()
            )));
        }
        Ok(model)
    }

    /// Rescales `(A, B)` to the unit-norm, sign-fixed convention first.
    pub fn normalized(a: DenseMatrix, b: DenseMatrix, cov: CovarianceSpec) -> Result<Self> {
        let (a, b) = normalize_pair(&a, &b)?;
        Self::new(a, b, cov)
    }

    /// Skips the unit-norm convention; shapes and finiteness are still checked.
    /// Useful for degenerate models such as `A = 0`.
    pub fn unchecked(a: DenseMatrix, b: DenseMatrix, cov: CovarianceSpec) -> Result<Self> {
        if !a.is_square() || !b.is_square() || a.nrows() == 0 || b.nrows() == 0 {
            return Err(MarError::dim("A and B must be non-empty square matrices"));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        cov.check_dims(a.nrows(), b.nrows())?;
        Ok(MarModel { a, b, cov })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn cov(&self) -> &CovarianceSpec {
        &self.cov
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    /// VAR(1) coefficient `B ⊗ A` of the vectorized model.
    pub fn phi(&self) -> DenseMatrix {
        kron(&self.b, &self.a)
    }

    pub fn sigma(&self) -> DenseMatrix {
        self.cov.dense(self.m(), self.n())
    }

    pub fn with_cov(&self, cov: CovarianceSpec) -> Result<Self> {
        cov.check_dims(self.m(), self.n())?;
        Ok(MarModel {
            a: self.a.clone(),
            b: self.b.clone(),
            cov,
        })
    }
}

/// `(rho(A) * rho(B) < 1, rho(A) * rho(B))`.
pub fn is_stationary(model: &MarModel) -> Result<(bool, f64)> {
    let r = spectral_radius(model.a())? * spectral_radius(model.b())?;
    Ok((r < 1.0, r))
}

pub(crate) fn require_stationary(model: &MarModel, what: &str) -> Result<()> {
    let (ok, r) = is_stationary(model)?;
    if !ok {
        return Err(MarError::precondition(format!(
            "{what} requires a causal model, rho(A)*rho(B) = {r}"
        )));
    }
    Ok(())
}

/// Lag-`k` autocovariance `Cov(vec X_t, vec X_{t-k})` from the causal
/// representation, truncated once an added term falls below
/// `tol * ||partial sum||_F`.
pub fn autocovariance(model: &MarModel, k: usize, tol: f64) -> Result<DenseMatrix> {
    if !(tol > 0.0) {
        return Err(MarError::precondition("autocovariance tolerance must be positive"));
    }
    require_stationary(model, "autocovariance")?;
    let phi = model.phi();
    let sigma = model.sigma();
    let mut lead = crate::kron::mat_pow(&phi, k);
    let mut lag = DenseMatrix::identity(phi.nrows(), phi.ncols());
    let mut sum = DenseMatrix::zeros(phi.nrows(), phi.ncols());
    for _ in 0..AUTOCOV_MAX_TERMS {
        let term = &lead * &sigma * lag.transpose();
        sum += &term;
        let tn = term.norm();
        if tn == 0.0 || tn < tol * sum.norm() {
            return Ok(sum);
        }
        lead = &lead * &phi;
        lag = &lag * &phi;
    }
    Err(MarError::numeric(format!(
        "autocovariance series did not converge within {AUTOCOV_MAX_TERMS} terms"
    )))
}

/// Random stationary model with iid normal entries rescaled so that
/// `rho(A) rho(B) = rho_target` and `||A||_F = 1`. Identity covariance.
pub fn random_model(m: usize, n: usize, rho_target: f64, seed: u64) -> Result<MarModel> {
    if !(rho_target > 0.0 && rho_target < 1.0) {
        return Err(MarError::precondition(format!(
            "target spectral radius product must lie in (0, 1), got {rho_target}"
        )));
    }
    if m == 0 || n == 0 {
        return Err(MarError::dim("model dimensions must be positive"));
    }
    let mut rng = rng_for(seed, STREAM_MODEL);
    loop {
        let a = standard_normal_matrix(&mut rng, m, m);
        let b = standard_normal_matrix(&mut rng, n, n);
        let ra = spectral_radius(&a)?;
        let rb = spectral_radius(&b)?;
        if ra == 0.0 || rb == 0.0 {
            continue;
        }
        let b = b * (rho_target / (ra * rb));
        return MarModel::normalized(a, b, CovarianceSpec::Identity);
    }
}

/// Innovation covariance settings of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// `Sigma = I`.
    I,
    /// `Sigma = Q Lambda Q^T`, random orthonormal `Q`, `|N(0,1)|` eigenvalues.
    II,
    /// `Sigma = Sigma_c ⊗ Sigma_r`, each factor drawn as in setting II.
    III,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::I => "I",
            Setting::II => "II",
            Setting::III => "III",
        })
    }
}

impl FromStr for Setting {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Setting::I),
            "II" | "2" => Ok(Setting::II),
            "III" | "3" => Ok(Setting::III),
            other => Err(MarError::Config(format!("unknown setting '{other}', expected I, II or III"))),
        }
    }
}

/// Haar-distributed orthonormal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub(crate) fn haar_orthonormal(rng: &mut impl Rng, k: usize) -> DenseMatrix {
    let g = standard_normal_matrix(rng, k, k);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn random_spd(rng: &mut impl Rng, k: usize) -> DenseMatrix {
    let q = haar_orthonormal(rng, k);
    let lambda = DenseVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal).abs());
    let s = &q * DenseMatrix::from_diagonal(&lambda) * q.transpose();
    crate::kron::symmetrize(&s)
}

pub fn random_covariance(setting: Setting, m: usize, n: usize, seed: u64) -> Result<CovarianceSpec> {
    let mut rng = rng_for(seed, STREAM_COV);
    match setting {
        Setting::I => Ok(CovarianceSpec::Identity),
        Setting::II => CovarianceSpec::full(random_spd(&mut rng, m * n)),
        Setting::III => {
            let sigma_c = random_spd(&mut rng, n);
            let sigma_r = random_spd(&mut rng, m);
            CovarianceSpec::kronecker(sigma_c, sigma_r)
        }
    }
}
