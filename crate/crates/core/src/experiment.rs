//! Monte Carlo studies of the simulation section: estimation error,
//! confidence interval coverage, specification test size and power, and
//! the LSE versus MLE efficiency ordering.
//!
//! Replication `r` uses seed `seed + r` for its model, covariance and data
//! draws, so results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{MarError, Result};
use crate::estimators::{fit_lse, fit_mle, fit_var1, FitOptions, MarFit, Method};
use crate::inference::{
    asymp_cov_lse, asymp_cov_mle, fit_intervals, kron_vec, proj_with_cov, specification_test, AsymptoticCovariance,
};
use crate::kron::{kron, spectral_radius, vec, DenseMatrix, DenseVector};
use crate::model::{
    random_covariance, random_model, rng_for, simulate, simulate_var1, standard_normal_matrix, MarModel, Setting,
    DEFAULT_BURN_IN, STREAM_MODEL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub setting: Setting,
    pub m: usize,
    pub n: usize,
    pub t_len: usize,
    pub reps: usize,
    pub seed: u64,
    /// Target `rho(A) rho(B)` of the random models.
    pub rho: f64,
    pub burn_in: usize,
    pub fit: FitOptions,
}

impl StudyConfig {
    pub fn new(setting: Setting, m: usize, n: usize, t_len: usize, reps: usize, seed: u64) -> Self {
        StudyConfig {
            setting,
            m,
            n,
            t_len,
            reps,
            seed,
            rho: 0.5,
            burn_in: DEFAULT_BURN_IN,
            fit: FitOptions::default(),
        }
    }

    fn rep_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }

    fn draw_model(&self, seed: u64) -> Result<MarModel> {
        random_model(self.m, self.n, self.rho, seed)?.with_cov(random_covariance(self.setting, self.m, self.n, seed)?)
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(MarError::Config("number of replications must be at least 1".into()));
        }
        self.fit.validate()
    }
}

/// Five-number summary plus mean, as drawn in box plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_summary(values: &[f64]) -> Option<BoxSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxSummary {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

/// Estimators compared in the studies; `Var1` is the unrestricted baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Mar(Method),
    Var1,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Estimator::Mar(m) => m.fmt(f),
            Estimator::Var1 => f.write_str("VAR1"),
        }
    }
}

pub const ESTIMATORS: [Estimator; 4] = [
    Estimator::Mar(Method::Proj),
    Estimator::Mar(Method::Lse),
    Estimator::Mar(Method::Mle),
    Estimator::Var1,
];

#[derive(Debug, Clone)]
pub struct ErrorStudy {
    pub config: StudyConfig,
    /// Per estimator, `||Phi_hat - B ⊗ A||_F^2` of each successful replication.
    pub errors: Vec<(Estimator, Vec<f64>)>,
    pub failures: Vec<(Estimator, usize)>,
}

impl ErrorStudy {
    pub fn errors_for(&self, e: Estimator) -> &[f64] {
        &self.errors.iter().find(|(k, _)| *k == e).expect("every estimator is recorded").1
    }

    pub fn median(&self, e: Estimator) -> Option<f64> {
        box_summary(self.errors_for(e)).map(|b| b.median)
    }
}

fn fit_method(series: &crate::model::MatrixSeries, method: Method, opts: &FitOptions) -> Result<MarFit> {
    crate::estimators::fit(series, method, opts)
}

/// Squared Frobenius error of each estimator of `B ⊗ A`.
pub fn estimation_error_study(cfg: &StudyConfig) -> Result<ErrorStudy> {
    cfg.validate()?;
    let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<f64>>> {
            let seed = cfg.rep_seed(r);
            let model = cfg.draw_model(seed)?;
            let series = simulate(&model, cfg.t_len, cfg.burn_in, seed)?;
            let phi = model.phi();
            Ok(ESTIMATORS
                .iter()
                .map(|e| {
                    let est = match e {
                        Estimator::Mar(m) => fit_method(&series, *m, &cfg.fit).map(|f| f.model.phi()),
                        Estimator::Var1 => fit_var1(&series).map(|f| f.phi_hat),
                    };
                    est.ok().map(|p| (p - &phi).norm_squared())
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut errors = Vec::new();
    let mut failures = Vec::new();
    for (k, e) in ESTIMATORS.iter().enumerate() {
        let vals: Vec<f64> = per_rep.iter().filter_map(|r| r[k]).collect();
        failures.push((*e, cfg.reps - vals.len()));
        errors.push((*e, vals));
    }
    Ok(ErrorStudy {
        config: cfg.clone(),
        errors,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub method: Method,
    pub stacked_hits: usize,
    pub stacked_total: usize,
    pub kron_hits: usize,
    pub kron_total: usize,
    pub failures: usize,
}

impl Coverage {
    pub fn stacked_rate(&self) -> f64 {
        self.stacked_hits as f64 / self.stacked_total.max(1) as f64
    }

    pub fn kron_rate(&self) -> f64 {
        self.kron_hits as f64 / self.kron_total.max(1) as f64
    }
}

fn fit_with_cov(series: &crate::model::MatrixSeries, method: Method, opts: &FitOptions) -> Result<(MarFit, AsymptoticCovariance)> {
    match method {
        Method::Proj => proj_with_cov(series),
        Method::Lse => {
            let f = fit_lse(series, opts)?;
            let c = asymp_cov_lse(&f, series)?;
            Ok((f, c))
        }
        Method::Mle => {
            let f = fit_mle(series, opts)?;
            let c = asymp_cov_mle(&f, series)?;
            Ok((f, c))
        }
    }
}

/// Counts of `(stacked, kron)` entries whose interval covers the truth.
fn coverage_hits(fit: &MarFit, cov: &AsymptoticCovariance, truth: &MarModel, level: f64) -> Result<(usize, usize, usize, usize)> {
    let ci = fit_intervals(fit, cov, level)?;
    // The truth is identified up to a joint sign; align it with the estimate.
    let s = if vec(fit.a()).dot(&vec(truth.a())) < 0.0 { -1.0 } else { 1.0 };
    let a = vec(truth.a()) * s;
    let b = match fit.method {
        Method::Proj => vec(truth.b()),
        _ => vec(&truth.b().transpose()),
    } * s;
    let stacked = crate::inference::concat(&a, &b);
    let kron_truth = kron_vec(&b, &a);
    let count = |lo: &DenseVector, hi: &DenseVector, x: &DenseVector| {
        x.iter().zip(lo.iter().zip(hi.iter())).filter(|(v, (l, h))| l <= v && v <= h).count()
    };
    Ok((
        count(&ci.lower, &ci.upper, &stacked),
        stacked.len(),
        count(&ci.kron_lower, &ci.kron_upper, &kron_truth),
        kron_truth.len(),
    ))
}

/// Entrywise coverage of marginal intervals at `level` for each method.
pub fn coverage_study(cfg: &StudyConfig, methods: &[Method], level: f64) -> Result<Vec<Coverage>> {
    cfg.validate()?;
    crate::inference::normal_critical_value(level)?;
    let per_rep: Vec<Vec<Option<(usize, usize, usize, usize)>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let seed = cfg.rep_seed(r);
            let model = cfg.draw_model(seed)?;
            let series = simulate(&model, cfg.t_len, cfg.burn_in, seed)?;
            Ok(methods
                .iter()
                .map(|&m| {
                    fit_with_cov(&series, m, &cfg.fit)
                        .and_then(|(f, c)| coverage_hits(&f, &c, &model, level))
                        .ok()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let mut c = Coverage {
                method,
                stacked_hits: 0,
                stacked_total: 0,
                kron_hits: 0,
                kron_total: 0,
                failures: 0,
            };
            for rep in &per_rep {
                match rep[k] {
                    Some((sh, st, kh, kt)) => {
                        c.stacked_hits += sh;
                        c.stacked_total += st;
                        c.kron_hits += kh;
                        c.kron_total += kt;
                    }
                    None => c.failures += 1,
                }
            }
            c
        })
        .collect())
}

fn unit_radius(rng: &mut impl rand::Rng, k: usize) -> Result<DenseMatrix> {
    loop {
        let g = standard_normal_matrix(rng, k, k);
        let r = spectral_radius(&g)?;
        if r > 0.0 {
            return Ok(g / r);
        }
    }
}

/// `Phi = .5 B1 ⊗ A1 + .5 eta B2 ⊗ A2` with all factors at unit spectral
/// radius, redrawn until `rho(Phi) < 1`.
pub fn mixture_coefficient(m: usize, n: usize, eta: f64, seed: u64) -> Result<DenseMatrix> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(MarError::precondition(format!("eta must be finite and >= 0, got {eta}")));
    }
    let mut rng = rng_for(seed, STREAM_MODEL);
    for _ in 0..10_000 {
        let a1 = unit_radius(&mut rng, m)?;
        let b1 = unit_radius(&mut rng, n)?;
        let a2 = unit_radius(&mut rng, m)?;
        let b2 = unit_radius(&mut rng, n)?;
        let phi = kron(&b1, &a1) * 0.5 + kron(&b2, &a2) * (0.5 * eta);
        if spectral_radius(&phi)? < 1.0 {
            return Ok(phi);
        }
    }
    Err(MarError::numeric(format!("no causal mixture coefficient found for eta = {eta}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionSummary {
    pub eta: f64,
    pub rejections: usize,
    pub completed: usize,
    pub failures: usize,
    pub mean_statistic: f64,
    pub df: usize,
}

impl RejectionSummary {
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.completed.max(1) as f64
    }
}

/// Rejection frequency of the Kronecker specification test at `alpha` on
/// data from the mixture model (`eta = 0` is the null).
pub fn spec_test_study(cfg: &StudyConfig, eta: f64, alpha: f64) -> Result<RejectionSummary> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MarError::precondition(format!("significance level must lie in (0, 1), got {alpha}")));
    }
    let results: Vec<Option<(f64, f64, usize)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let seed = cfg.rep_seed(r);
            let phi = mixture_coefficient(cfg.m, cfg.n, eta, seed)?;
            let cov = random_covariance(cfg.setting, cfg.m, cfg.n, seed)?;
            let series = simulate_var1(&phi, &cov, cfg.m, cfg.n, cfg.t_len, cfg.burn_in, seed)?;
            Ok(specification_test(&series).ok().map(|t| (t.statistic, t.p_value, t.df)))
        })
        .collect::<Result<_>>()?;
    let done: Vec<_> = results.iter().flatten().collect();
    Ok(RejectionSummary {
        eta,
        rejections: done.iter().filter(|(_, p, _)| *p < alpha).count(),
        completed: done.len(),
        failures: cfg.reps - done.len(),
        mean_statistic: done.iter().map(|(s, _, _)| s).sum::<f64>() / done.len().max(1) as f64,
        df: (cfg.m * cfg.m - 1) * (cfg.n * cfg.n - 1),
    })
}

/// For one model drawn from `cfg.seed`, the ratio
/// `min eig(Xi_2 - Xi_3) / trace(Xi_2)` on each replicated series.
pub fn efficiency_study(cfg: &StudyConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let model = cfg.draw_model(cfg.seed)?;
    (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let series = simulate(&model, cfg.t_len, cfg.burn_in, cfg.rep_seed(r))?;
            let lse = fit_lse(&series, &cfg.fit)?;
            let mle = fit_mle(&series, &cfg.fit)?;
            let x2 = asymp_cov_lse(&lse, &series)?.xi;
            let x3 = asymp_cov_mle(&mle, &series)?.xi;
            let diff = &x2 - &x3;
            let min = diff.symmetric_eigen().eigenvalues.min();
            Ok(min / x2.trace())
        })
        .collect()
}
