use nalgebra::linalg::Cholesky;
use rand::Rng;

use super::{require_stationary, rng_for, standard_normal_matrix, CovarianceSpec, MarModel, MatrixSeries, STREAM_DATA};
use crate::error::{MarError, Result};
use crate::kron::{spectral_radius, DenseMatrix, DenseVector};

pub const DEFAULT_BURN_IN: usize = 500;

/// Draws `E_t` with `Cov(vec E_t) = Sigma`.
enum NoiseSampler {
    Identity,
    Diagonal(DenseVector),
    Full(DenseMatrix),
    // E = L_r Z L_c^T has covariance (L_c ⊗ L_r)(L_c ⊗ L_r)^T = Sigma_c ⊗ Sigma_r.
    Kronecker { l_r: DenseMatrix, l_c: DenseMatrix },
}

fn cholesky_factor(m: &DenseMatrix, what: &str) -> Result<DenseMatrix> {
    Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| MarError::numeric(format!("{what} is not positive definite")))
}

impl NoiseSampler {
    fn new(cov: &CovarianceSpec) -> Result<Self> {
        Ok(match cov {
            CovarianceSpec::Identity => NoiseSampler::Identity,
            CovarianceSpec::Diagonal(v) => NoiseSampler::Diagonal(v.map(f64::sqrt)),
            CovarianceSpec::Full(s) => NoiseSampler::Full(cholesky_factor(s, "covariance")?),
            CovarianceSpec::Kronecker { sigma_c, sigma_r } => NoiseSampler::Kronecker {
                l_r: cholesky_factor(sigma_r, "row covariance")?,
                l_c: cholesky_factor(sigma_c, "column covariance")?,
            },
        })
    }

    fn draw(&self, rng: &mut impl Rng, m: usize, n: usize) -> DenseMatrix {
        let z = standard_normal_matrix(rng, m, n);
        match self {
            NoiseSampler::Identity => z,
            NoiseSampler::Diagonal(sd) => {
                DenseMatrix::from_iterator(m, n, z.iter().zip(sd.iter()).map(|(z, s)| z * s))
            }
            NoiseSampler::Full(l) => {
                let e = l * DenseVector::from_column_slice(z.as_slice());
                DenseMatrix::from_column_slice(m, n, e.as_slice())
            }
            NoiseSampler::Kronecker { l_r, l_c } => l_r * z * l_c.transpose(),
        }
    }
}

/// Simulates `X_t = A X_{t-1} B^T + E_t` from `X_0 = 0`, discarding the first
/// `burn_in` draws. Deterministic given `seed`.
pub fn simulate(model: &MarModel, t_len: usize, burn_in: usize, seed: u64) -> Result<MatrixSeries> {
    require_stationary(model, "simulation")?;
    let (a, b) = (model.a(), model.b());
    let b_t = b.transpose();
    run(model.cov(), model.m(), model.n(), t_len, burn_in, seed, |x| a * x * &b_t)
}

/// Simulates the unrestricted vectorized model `vec X_t = Phi vec X_{t-1} + vec E_t`.
pub fn simulate_var1(
    phi: &DenseMatrix,
    cov: &CovarianceSpec,
    m: usize,
    n: usize,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<MatrixSeries> {
    if phi.shape() != (m * n, m * n) {
        return Err(MarError::dim(format!("VAR coefficient must be {0}x{0}", m * n)));
    }
    cov.check_dims(m, n)?;
    let r = spectral_radius(phi)?;
    if r >= 1.0 {
        return Err(MarError::precondition(format!(
            "simulation requires a causal model, rho(Phi) = {r}"
        )));
    }
    run(cov, m, n, t_len, burn_in, seed, |x| {
        let v = phi * DenseVector::from_column_slice(x.as_slice());
        DenseMatrix::from_column_slice(m, n, v.as_slice())
    })
}

fn run(
    cov: &CovarianceSpec,
    m: usize,
    n: usize,
    t_len: usize,
    burn_in: usize,
    seed: u64,
    step: impl Fn(&DenseMatrix) -> DenseMatrix,
) -> Result<MatrixSeries> {
    if t_len == 0 {
        return Err(MarError::precondition("simulation length must be at least 1"));
    }
    let sampler = NoiseSampler::new(cov)?;
    let mut rng = rng_for(seed, STREAM_DATA);
    let mut x = DenseMatrix::zeros(m, n);
    let mut out = Vec::with_capacity(t_len);
    for t in 0..burn_in + t_len {
        x = step(&x) + sampler.draw(&mut rng, m, n);
        if t >= burn_in {
            out.push(x.clone());
        }
    }
    if out.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(MarError::numeric("simulated series overflowed"));
    }
    Ok(MatrixSeries::from_parts_unchecked(out, None, None))
}
