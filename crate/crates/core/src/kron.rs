//! Kronecker-product linear algebra.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major storage). `vec` stacks
//! columns, so entry `(i, j)` of an `m x n` matrix lands at `j * m + i`.
//!
//! The rearrangement operator maps an `mn x mn` matrix built from `n x n`
//! blocks of size `m x m` onto an `m^2 x n^2` matrix such that
//! `rearrange(kron(B, A)) == vec(A) * vec(B)^T`. This turns the nearest
//! Kronecker product problem into a rank-one SVD problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{MarError, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

const SCHUR_MAX_ITER: usize = 10_000;

pub fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    match m.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(k) => Err(MarError::Domain(format!(
            "{what} has a non-finite entry at ({}, {})",
            k % m.nrows(),
            k / m.nrows()
        ))),
    }
}

/// Block matrix whose `(i, j)` block is `c[(i, j)] * d`.
pub fn kron(c: &DenseMatrix, d: &DenseMatrix) -> DenseMatrix {
    c.kronecker(d)
}

/// Column-stacking vectorization.
pub fn vec(m: &DenseMatrix) -> DenseVector {
    DenseVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DenseVector, m: usize, n: usize) -> Result<DenseMatrix> {
    if v.len() != m * n {
        return Err(MarError::dim(format!(
            "cannot reshape vector of length {} into {m}x{n}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_column_slice(m, n, v.as_slice()))
}

fn check_rearrange_input(phi: &DenseMatrix, m: usize, n: usize) -> Result<()> {
    let side = m * n;
    if m == 0 || n == 0 || phi.nrows() != side || phi.ncols() != side {
        return Err(MarError::dim(format!(
            "rearrangement needs a {side}x{side} matrix for m={m}, n={n}, got {}x{}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    Ok(())
}

/// Rearrangement operator: `rearrange(kron(B, A), m, n) = vec(A) vec(B)^T`
/// for `A` of size `m x m` and `B` of size `n x n`.
pub fn rearrange(phi: &DenseMatrix, m: usize, n: usize) -> Result<DenseMatrix> {
    check_rearrange_input(phi, m, n)?;
    // Block (k, l) of phi is b_kl * A; its (i, j) entry sits at row k*m+i,
    // column l*m+j and maps to row j*m+i (a_ij in vec A), column l*n+k
    // (b_kl in vec B).
    let mut out = DenseMatrix::zeros(m * m, n * n);
    for l in 0..n {
        for k in 0..n {
            for j in 0..m {
                for i in 0..m {
                    out[(j * m + i, l * n + k)] = phi[(k * m + i, l * m + j)];
                }
            }
        }
    }
    Ok(out)
}

/// Permutation `pi` (0-based) with `vec(rearrange(phi))[k] == vec(phi)[pi[k]]`
/// for every `mn x mn` matrix `phi`.
pub fn rearrange_permutation(m: usize, n: usize) -> Vec<usize> {
    let side = m * n;
    let mut pi = vec![0; side * side];
    for l in 0..n {
        for k in 0..n {
            for j in 0..m {
                for i in 0..m {
                    let row = j * m + i;
                    let col = l * n + k;
                    let src_row = k * m + i;
                    let src_col = l * m + j;
                    pi[col * m * m + row] = src_col * side + src_row;
                }
            }
        }
    }
    pi
}

/// Permutation matrix `P` with `(P x)[k] = x[pi[k]]`.
pub fn permutation_matrix(pi: &[usize]) -> DenseMatrix {
    let n = pi.len();
    let mut p = DenseMatrix::zeros(n, n);
    for (k, &src) in pi.iter().enumerate() {
        p[(k, src)] = 1.0;
    }
    p
}

/// Conjugates a square matrix by a permutation: returns `P M P^T` without
/// forming `P`.
pub fn permute_symmetric(mat: &DenseMatrix, pi: &[usize]) -> DenseMatrix {
    let n = pi.len();
    DenseMatrix::from_fn(n, n, |a, b| mat[(pi[a], pi[b])])
}

/// Largest modulus over the complex eigenvalues of a square matrix.
pub fn spectral_radius(m: &DenseMatrix) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(MarError::dim(format!(
            "spectral radius of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    ensure_finite(m, "matrix")?;
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| MarError::numeric("eigenvalue iteration did not converge"))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Thin SVD with singular values sorted nonincreasing.
pub struct SortedSvd {
    pub u: DenseMatrix,
    pub singular_values: DenseVector,
    pub v: DenseMatrix,
}

pub fn sorted_svd(m: &DenseMatrix) -> Result<SortedSvd> {
    ensure_finite(m, "matrix")?;
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|_| MarError::numeric("SVD did not converge"))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let r = s.nrows();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut su = DenseMatrix::zeros(m.nrows(), r);
    let mut sv = DenseMatrix::zeros(m.ncols(), r);
    let mut ss = DenseVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..m.nrows() {
            su[(i, dst)] = u[(i, src)];
        }
        for i in 0..m.ncols() {
            sv[(i, dst)] = v[(i, src)];
        }
        ss[dst] = s[src];
    }
    Ok(SortedSvd {
        u: su,
        singular_values: ss,
        v: sv,
    })
}

/// Sign that makes the largest-magnitude entry of `a` positive; ties go to
/// the lowest column-major index.
pub fn sign_rule(a: &DenseMatrix) -> f64 {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in a.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    sign
}

/// One term `B ⊗ A` of a Kronecker sum.
#[derive(Debug, Clone)]
pub struct KronTerm {
    /// `m x m`, unit Frobenius norm, sign-normalized.
    pub a: DenseMatrix,
    /// `n x n`, carries the scale.
    pub b: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct KronTermList {
    pub terms: Vec<KronTerm>,
    /// All singular values of the rearranged matrix, nonincreasing.
    pub singular_values: Vec<f64>,
}

impl KronTermList {
    /// `sum_i kron(B_i, A_i)`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut iter = self.terms.iter();
        let first = iter.next().expect("at least one term");
        let mut acc = kron(&first.b, &first.a);
        for t in iter {
            acc += kron(&t.b, &t.a);
        }
        acc
    }
}

/// Nearest sum of `k` Kronecker products under the Frobenius norm.
pub fn nkp_project(phi: &DenseMatrix, m: usize, n: usize, k: usize) -> Result<KronTermList> {
    let g = rearrange(phi, m, n)?;
    let max_k = (m * m).min(n * n);
    if k == 0 || k > max_k {
        return Err(MarError::precondition(format!(
            "number of Kronecker terms must be in 1..={max_k}, got {k}"
        )));
    }
    let svd = sorted_svd(&g)?;
    let mut terms = Vec::with_capacity(k);
    for idx in 0..k {
        let u = svd.u.column(idx).into_owned();
        let v = svd.v.column(idx).into_owned();
        let mut a = unvec(&u, m, m)?;
        let mut b = unvec(&v, n, n)? * svd.singular_values[idx];
        let s = sign_rule(&a);
        if s < 0.0 {
            a.neg_mut();
            b.neg_mut();
        }
        terms.push(KronTerm { a, b });
    }
    Ok(KronTermList {
        terms,
        singular_values: svd.singular_values.iter().copied().collect(),
    })
}

/// Default cutoff for [`pinv`]: `eps * max(rows, cols) * sigma_max`.
pub fn default_pinv_tol(m: &DenseMatrix, sigma_max: f64) -> f64 {
    f64::EPSILON * m.nrows().max(m.ncols()) as f64 * sigma_max
}

/// Moore-Penrose pseudoinverse, zeroing singular values `<= tol`.
pub fn pinv(m: &DenseMatrix, tol: Option<f64>) -> Result<DenseMatrix> {
    if let Some(t) = tol {
        if t < 0.0 || !t.is_finite() {
            return Err(MarError::precondition(format!(
                "pseudoinverse tolerance must be finite and >= 0, got {t}"
            )));
        }
    }
    let svd = sorted_svd(m)?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = tol.unwrap_or_else(|| default_pinv_tol(m, smax));
    let keep = svd.singular_values.iter().take_while(|&&s| s > tol).count();
    Ok(pinv_from_svd(&svd, keep, m.ncols(), m.nrows()))
}

/// Pseudoinverse keeping exactly the `rank` largest singular values.
pub fn pinv_rank(m: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    let svd = sorted_svd(m)?;
    if rank > svd.singular_values.len() {
        return Err(MarError::precondition(format!(
            "requested rank {rank} exceeds {} available singular values",
            svd.singular_values.len()
        )));
    }
    if svd.singular_values.iter().take(rank).any(|&s| s <= 0.0) {
        return Err(MarError::numeric(format!(
            "matrix has rank below the requested {rank}"
        )));
    }
    Ok(pinv_from_svd(&svd, rank, m.ncols(), m.nrows()))
}

fn pinv_from_svd(svd: &SortedSvd, keep: usize, rows: usize, cols: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(rows, cols);
    for idx in 0..keep {
        let s = svd.singular_values[idx];
        let v = svd.v.column(idx);
        let u = svd.u.column(idx);
        out += (v * u.transpose()) / s;
    }
    out
}

/// Integer matrix power by repeated squaring.
pub fn mat_pow(m: &DenseMatrix, k: usize) -> DenseMatrix {
    let mut result = DenseMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

pub fn is_symmetric(m: &DenseMatrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

pub(crate) fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub(crate) fn spd_inverse(m: &DenseMatrix, what: &str) -> Result<DenseMatrix> {
    nalgebra::linalg::Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| MarError::numeric(format!("{what} is not positive definite")))
}

pub(crate) fn general_inverse(m: &DenseMatrix, what: &str) -> Result<DenseMatrix> {
    let lu = m.clone().lu();
    lu.try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or_else(|| MarError::numeric(format!("{what} is singular")))
}
