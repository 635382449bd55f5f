//! Matrix autoregressive models of order one.
//!
//! `X_t = A X_{t-1} B^T + E_t` for `m x n` observations `X_t`. The crate
//! simulates such series, fits `(A, B)` by projection, iterated least squares
//! or a Kronecker-covariance MLE, computes plug-in asymptotic covariances and
//! a Kronecker-structure specification test, and evaluates rolling
//! one-step-ahead forecasts.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod forecast;
pub mod inference;
pub mod io;
pub mod kron;
pub mod model;

pub use error::{MarError, Result};
pub use estimators::{fit, fit_lse, fit_mle, fit_proj, fit_var1, FitOptions, Init, MarFit, Method, Var1Fit};
pub use kron::{DenseMatrix, DenseVector};
pub use model::{CovarianceSpec, MarModel, MatrixSeries, Setting};
