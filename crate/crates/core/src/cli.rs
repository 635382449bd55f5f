//! Command-line front end: `simulate`, `fit`, `test`, `irf`, `forecast` and
//! `experiment`.
//!
//! Exit codes: 0 on success, 1 on numeric or data errors, 2 on usage errors.
//! A `--config FILE` of `key=value` lines supplies defaults for long flags;
//! flags given on the command line take precedence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{MarError, Result};
use crate::estimators::{fit, fit_var1, FitOptions, Init, MarFit, Method, Var1Fit};
use crate::experiment::{
    box_summary, coverage_study, efficiency_study, estimation_error_study, spec_test_study, StudyConfig, ESTIMATORS,
};
use crate::forecast::{rolling_forecast, ForecastMethod, ForecastOptions};
use crate::inference::{asymp_cov, fit_intervals, normal_critical_value, specification_test, ConfidenceIntervals};
use crate::io::{csv_err, fmt_f64, load_series, preprocess, write_series, PreprocessStep};
use crate::kron::{kron, spd_inverse, vec, DenseMatrix};
use crate::model::{irf_s1, random_covariance, random_model, simulate, MarModel, MatrixSeries, Setting, DEFAULT_BURN_IN};

pub const THREADS_ENV: &str = "MAR_KIT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mar-kit", version, about = "Matrix autoregressive MAR(1) models")]
struct Cli {
    /// Flat key=value file supplying defaults for long flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a MAR(1) series and write it as long CSV.
    Simulate(SimulateArgs),
    /// Fit A and B and report coefficients with intervals.
    Fit(FitArgs),
    /// Test whether the VAR(1) coefficient has Kronecker form.
    Test(TestArgs),
    /// Impulse responses to a one standard deviation shock.
    Irf(IrfArgs),
    /// Rolling one-step-ahead forecast comparison.
    Forecast(ForecastArgs),
    /// Monte Carlo studies of the estimators and the test.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Long-format CSV with header t,row,col,value.
    #[arg(value_name = "INPUT")]
    positional: Option<PathBuf>,
    #[arg(long = "input", value_name = "INPUT", hide = true)]
    flag: Option<PathBuf>,
    /// Preprocessing step, e.g. `logdiff@GDP|PROD`, `seasonal:4`,
    /// `rownormalize`; separate several with ';'.
    #[arg(long, value_delimiter = ';')]
    preprocess: Vec<String>,
}

#[derive(Args, Debug)]
struct FitFlags {
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Starting values for iterative fits: proj or identity.
    #[arg(long, default_value = "proj")]
    init: String,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Directory for output files and the run manifest; without it the main
    /// table goes to stdout.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "I")]
    setting: String,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long = "T", default_value_t = 400)]
    t_len: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Output CSV; a `.manifest.json` is written next to it.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// proj, lse, mle or var1.
    #[arg(long, default_value = "lse")]
    method: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct IrfArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "mle")]
    method: String,
    /// 1-based `row,col` of the shocked entry.
    #[arg(long, default_value = "1,1")]
    shock: String,
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    input: InputArgs,
    /// First predicted time point (1-based).
    #[arg(long)]
    start: usize,
    /// Comma-separated: proj, lse, mle, var1, iar1, iar2.
    #[arg(long, default_value = "proj,lse,mle,var1,iar1,iar2")]
    method: String,
    /// Fit once on the initial window instead of before every step.
    #[arg(long)]
    no_refit: bool,
    /// Drop the intercept from the univariate AR baselines.
    #[arg(long)]
    no_intercept: bool,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// errors, coverage, spec or efficiency.
    #[arg(long, default_value = "errors")]
    study: String,
    /// Comma-separated settings.
    #[arg(long, default_value = "I")]
    setting: String,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Comma-separated series lengths.
    #[arg(long = "T", default_value = "400")]
    t_len: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Comma-separated mixture weights for the spec study.
    #[arg(long, default_value = "0")]
    eta: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    out: OutArgs,
}

/// Validated settings shared by the data-driven commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub preprocess: Vec<PreprocessStep>,
    pub fit: FitOptions,
    pub level: f64,
    pub horizon: usize,
    /// 0-based shocked entry.
    pub shock: (usize, usize),
    pub out_dir: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> MarError {
    MarError::Config(msg.into())
}

impl RunConfig {
    fn build(input: &InputArgs, fit: Option<&FitFlags>, out: &OutArgs) -> Result<Self> {
        let path = input
            .positional
            .clone()
            .or_else(|| input.flag.clone())
            .ok_or_else(|| usage("an input CSV is required"))?;
        let preprocess = input
            .preprocess
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse())
            .collect::<Result<Vec<PreprocessStep>>>()?;
        let mut opts = FitOptions::default();
        if let Some(f) = fit {
            opts.max_iter = f.max_iter;
            opts.rel_tol = f.tol;
            opts.init = match f.init.to_ascii_lowercase().as_str() {
                "proj" => Init::FromProjection,
                "identity" => Init::Identity,
                other => return Err(usage(format!("unknown init '{other}', expected proj or identity"))),
            };
            opts.validate()?;
        }
        Ok(RunConfig {
            input: path,
            preprocess,
            fit: opts,
            level: 0.95,
            horizon: 0,
            shock: (0, 0),
            out_dir: out.out_dir.clone(),
        })
    }

    fn with_level(mut self, level: f64) -> Result<Self> {
        normal_critical_value(level).map_err(|e| usage(e.to_string()))?;
        self.level = level;
        Ok(self)
    }

    fn load(&self) -> Result<MatrixSeries> {
        preprocess(&load_series(&self.input)?, &self.preprocess)
    }
}

/// Collects output tables, then writes them to a directory with a manifest
/// or prints the main one.
struct Outputs<'a> {
    command: &'static str,
    seed: Option<u64>,
    flags: BTreeMap<String, String>,
    files: Vec<(String, String)>,
    extra: serde_json::Map<String, serde_json::Value>,
    stdout: &'a mut dyn Write,
}

impl Outputs<'_> {
    fn add(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    fn finish(self, out_dir: Option<&Path>, summary: Option<String>) -> Result<()> {
        match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                for (name, body) in &self.files {
                    fs::write(dir.join(name), body)?;
                }
                let names: Vec<&str> = self.files.iter().map(|(n, _)| n.as_str()).collect();
                fs::write(dir.join("manifest.json"), manifest(self.command, self.seed, &self.flags, &names, self.extra))?;
                if let Some(s) = summary {
                    self.stdout.write_all(s.as_bytes())?;
                }
            }
            None => {
                if let Some((_, body)) = self.files.first() {
                    self.stdout.write_all(body.as_bytes())?;
                }
            }
        }
        Ok(())
    }
}

fn manifest(
    command: &str,
    seed: Option<u64>,
    flags: &BTreeMap<String, String>,
    outputs: &[&str],
    extra: serde_json::Map<String, serde_json::Value>,
) -> String {
    let mut v = json!({
        "tool": "mar-kit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "flags": flags,
        "outputs": outputs,
    });
    if let serde_json::Value::Object(map) = &mut v {
        map.extend(extra);
    }
    let mut s = serde_json::to_string_pretty(&v).expect("manifest is valid JSON");
    s.push('\n');
    s
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| MarError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn matrix_json(m: &DenseMatrix) -> serde_json::Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

/// `+` if the interval lies above zero, `-` if below, `0` otherwise.
pub fn significance_mark(lower: f64, upper: f64) -> &'static str {
    if lower > 0.0 {
        "+"
    } else if upper < 0.0 {
        "-"
    } else {
        "0"
    }
}

struct CoefRow {
    entry: String,
    estimate: f64,
    stderr: f64,
    lower: f64,
    upper: f64,
}

impl CoefRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.entry.clone(),
            fmt_f64(self.estimate),
            fmt_f64(self.stderr),
            fmt_f64(self.lower),
            fmt_f64(self.upper),
            significance_mark(self.lower, self.upper).to_string(),
        ]
    }
}

const COEF_HEADER: [&str; 6] = ["entry", "estimate", "stderr", "lower", "upper", "mark"];

fn mar_coef_rows(fit: &MarFit, ci: &ConfidenceIntervals, rows: &[String], cols: &[String]) -> Vec<CoefRow> {
    let (m, n) = (fit.model.m(), fit.model.n());
    let mut out = Vec::new();
    for j in 0..m {
        for i in 0..m {
            let k = j * m + i;
            out.push(CoefRow {
                entry: format!("A[{},{}]", rows[i], rows[j]),
                estimate: ci.estimate[k],
                stderr: ci.stderr[k],
                lower: ci.lower[k],
                upper: ci.upper[k],
            });
        }
    }
    for j in 0..n {
        for i in 0..n {
            // PROJ stacks vec(B); LSE and MLEs stack vec(B^T).
            let k = m * m
                + match fit.method {
                    Method::Proj => j * n + i,
                    _ => i * n + j,
                };
            out.push(CoefRow {
                entry: format!("B[{},{}]", cols[i], cols[j]),
                estimate: ci.estimate[k],
                stderr: ci.stderr[k],
                lower: ci.lower[k],
                upper: ci.upper[k],
            });
        }
    }
    out
}

fn var1_coef_rows(v: &Var1Fit, level: f64, rows: &[String], cols: &[String]) -> Result<Vec<CoefRow>> {
    let z = normal_critical_value(level)?;
    let cov = kron(&spd_inverse(&v.gamma0_hat, "sample covariance Gamma0")?, &v.sigma_hat) / v.t_eff as f64;
    let est = vec(&v.phi_hat);
    let d = v.m * v.n;
    let name = |k: usize| format!("{}:{}", rows[k % v.m], cols[k / v.m]);
    let mut out = Vec::with_capacity(d * d);
    for c in 0..d {
        for r in 0..d {
            let k = c * d + r;
            let se = cov[(k, k)].max(0.0).sqrt();
            out.push(CoefRow {
                entry: format!("Phi[{},{}]", name(r), name(c)),
                estimate: est[k],
                stderr: se,
                lower: est[k] - z * se,
                upper: est[k] + z * se,
            });
        }
    }
    Ok(out)
}

fn human_matrix(title: &str, rows: &[CoefRow], labels: &[String]) -> String {
    let k = labels.len();
    let mut s = format!("{title}\n{:>12}", "");
    for l in labels {
        s.push_str(&format!(" {l:>12}"));
    }
    s.push('\n');
    for i in 0..k {
        s.push_str(&format!("{:>12}", labels[i]));
        for j in 0..k {
            let r = &rows[j * k + i];
            let cell = format!("{:.3}({})", r.estimate, significance_mark(r.lower, r.upper));
            s.push_str(&format!(" {cell:>12}"));
        }
        s.push('\n');
    }
    s
}

fn fit_summary_table(items: &[(&str, String)]) -> Result<String> {
    csv_table(&["key", "value"], items.iter().map(|(k, v)| vec![k.to_string(), v.clone()]))
}

fn cmd_fit(args: &FitArgs, out: &mut Outputs, err: &mut dyn Write) -> Result<Option<String>> {
    let cfg = RunConfig::build(&args.input, Some(&args.fit), &args.out)?.with_level(args.level)?;
    let series = cfg.load()?;
    let (rows, cols) = (series.row_names(), series.col_names());
    let method = args.method.to_ascii_lowercase();
    let summary = if method == "var1" {
        let v = fit_var1(&series)?;
        let coef = var1_coef_rows(&v, cfg.level, &rows, &cols)?;
        out.add("coefficients.csv", csv_table(&COEF_HEADER, coef.iter().map(CoefRow::record))?);
        out.add(
            "fit_summary.csv",
            fit_summary_table(&[
                ("method", "VAR1".into()),
                ("T", series.len().to_string()),
                ("t_used", v.t_eff.to_string()),
                ("level", fmt_f64(cfg.level)),
            ])?,
        );
        format!("VAR1 fit on T={} ({} coefficients)\n", series.len(), coef.len())
    } else {
        let method: Method = method.parse().map_err(|_| usage(format!("unknown method '{}'", args.method)))?;
        let f = fit(&series, method, &cfg.fit)?;
        for w in &f.warnings {
            writeln!(err, "warning: {w}")?;
        }
        let cov = asymp_cov(&f, &series)?;
        let ci = fit_intervals(&f, &cov, cfg.level)?;
        let coef = mar_coef_rows(&f, &ci, &rows, &cols);
        out.add("coefficients.csv", csv_table(&COEF_HEADER, coef.iter().map(CoefRow::record))?);
        let objective = f.objective_trace.last().copied().unwrap_or(f64::NAN);
        out.add(
            "fit_summary.csv",
            fit_summary_table(&[
                ("method", method.to_string()),
                ("T", series.len().to_string()),
                ("t_used", cov.t_used.to_string()),
                ("iterations", f.iterations.to_string()),
                ("converged", f.converged.to_string()),
                ("objective", fmt_f64(objective)),
                ("rho_product", fmt_f64(f.rho_product)),
                ("causal", f.is_causal().to_string()),
                ("level", fmt_f64(cfg.level)),
            ])?,
        );
        out.extra.insert(
            "fit".into(),
            json!({
                "a": matrix_json(f.a()),
                "b": matrix_json(f.b()),
                "sigma": matrix_json(&f.model.sigma()),
            }),
        );
        let m = f.model.m();
        format!(
            "{method} fit: T={}, iterations={}, converged={}, rho(A)rho(B)={:.3}\n\n{}\n{}",
            series.len(),
            f.iterations,
            f.converged,
            f.rho_product,
            human_matrix("A (row effects)", &coef[..m * m], &rows),
            human_matrix("B (column effects)", &coef[m * m..], &cols),
        )
    };
    Ok(Some(summary))
}

fn cmd_test(args: &TestArgs, out: &mut Outputs, err: &mut dyn Write) -> Result<Option<String>> {
    let cfg = RunConfig::build(&args.input, None, &args.out)?;
    let series = cfg.load()?;
    let r = specification_test(&series)?;
    if let Some(w) = &r.rank_warning {
        writeln!(err, "warning: {w}")?;
    }
    out.add(
        "spec_test.csv",
        csv_table(
            &["stat", "value"],
            [
                vec!["statistic".into(), fmt_f64(r.statistic)],
                vec!["df".into(), r.df.to_string()],
                vec!["p_value".into(), fmt_f64(r.p_value)],
                vec!["t_used".into(), r.t_used.to_string()],
            ],
        )?,
    );
    Ok(Some(format!(
        "Kronecker specification test: statistic={:.3}, df={}, p-value={:.4}\n",
        r.statistic, r.df, r.p_value
    )))
}

fn parse_shock(s: &str, m: usize, n: usize) -> Result<(usize, usize)> {
    let bad = || usage(format!("shock must be 'row,col' with 1-based indices, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let i: usize = a.trim().parse().map_err(|_| bad())?;
    let j: usize = b.trim().parse().map_err(|_| bad())?;
    if i == 0 || j == 0 || i > m || j > n {
        return Err(MarError::Index(format!("shock ({i},{j}) outside a {m}x{n} grid")));
    }
    Ok((i - 1, j - 1))
}

fn cmd_irf(args: &IrfArgs, out: &mut Outputs, err: &mut dyn Write) -> Result<Option<String>> {
    let mut cfg = RunConfig::build(&args.input, Some(&args.fit), &args.out)?;
    let method: Method = args.method.parse().map_err(|e: MarError| usage(e.to_string()))?;
    let series = cfg.load()?;
    cfg.shock = parse_shock(&args.shock, series.m(), series.n())?;
    cfg.horizon = args.horizon;
    let f = fit(&series, method, &cfg.fit)?;
    for w in &f.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let r = irf_s1(&f.model, cfg.shock.0, cfg.shock.1, cfg.horizon)?;
    let (rows, cols) = (series.row_names(), series.col_names());
    let mut records = Vec::new();
    for (k, (resp, acc)) in r.responses.iter().zip(&r.accumulated).enumerate() {
        for j in 0..series.n() {
            for i in 0..series.m() {
                records.push(vec![
                    k.to_string(),
                    rows[i].clone(),
                    cols[j].clone(),
                    fmt_f64(resp[(i, j)]),
                    fmt_f64(acc[(i, j)]),
                ]);
            }
        }
    }
    out.add("irf.csv", csv_table(&["lag", "row", "col", "response", "accumulated"], records)?);
    if let Some(fac) = &r.factored {
        let mut records = Vec::new();
        for k in 0..=cfg.horizon {
            for (i, v) in fac.row_resp[k].iter().enumerate() {
                records.push(vec![k.to_string(), "row".into(), rows[i].clone(), fmt_f64(*v)]);
            }
            for (j, v) in fac.col_resp[k].iter().enumerate() {
                records.push(vec![k.to_string(), "col".into(), cols[j].clone(), fmt_f64(*v)]);
            }
        }
        out.add("irf_factored.csv", csv_table(&["lag", "side", "label", "response"], records)?);
    }
    Ok(Some(format!(
        "{method} impulse responses to a shock in ({},{}) for lags 0..={}\n",
        rows[cfg.shock.0], cols[cfg.shock.1], cfg.horizon
    )))
}

fn cmd_forecast(args: &ForecastArgs, out: &mut Outputs) -> Result<Option<String>> {
    let cfg = RunConfig::build(&args.input, Some(&args.fit), &args.out)?;
    let methods = args
        .method
        .split(',')
        .map(|s| s.parse::<ForecastMethod>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let series = cfg.load()?;
    let opts = ForecastOptions {
        fit: cfg.fit.clone(),
        refit_each_step: !args.no_refit,
        iar_intercept: !args.no_intercept,
    };
    let mut steps = Vec::new();
    let mut totals = Vec::new();
    let mut summary = String::from("method        total squared error\n");
    for m in methods {
        let r = rolling_forecast(&series, args.start, m, &opts)?;
        for (s, e) in r.step_errors.iter().enumerate() {
            steps.push(vec![m.to_string(), (r.t0 + s).to_string(), fmt_f64(*e)]);
        }
        totals.push(vec![m.to_string(), fmt_f64(r.total_error), r.step_errors.len().to_string()]);
        summary.push_str(&format!("{:<12} {:>20.3}\n", m.to_string(), r.total_error));
    }
    out.add("forecast_summary.csv", csv_table(&["method", "total_error", "steps"], totals)?);
    out.add("forecast.csv", csv_table(&["method", "t", "squared_error"], steps)?);
    Ok(Some(summary))
}

fn list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| usage(format!("invalid {what} '{x}'"))))
        .collect()
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<(String, String)> {
    let settings: Vec<Setting> = args
        .setting
        .split(',')
        .map(|s| s.parse::<Setting>())
        .collect::<Result<_>>()?;
    let lengths: Vec<usize> = list(&args.t_len, "series length")?;
    let etas: Vec<f64> = list(&args.eta, "eta")?;
    let fit_opts = RunConfig::build(
        &InputArgs {
            positional: Some(PathBuf::new()),
            flag: None,
            preprocess: Vec::new(),
        },
        Some(&args.fit),
        &args.out,
    )?
    .fit;
    normal_critical_value(args.level).map_err(|e| usage(e.to_string()))?;
    if !(args.rho > 0.0 && args.rho < 1.0) {
        return Err(usage(format!("rho must lie in (0, 1), got {}", args.rho)));
    }
    let mut records: Vec<Vec<String>> = Vec::new();
    let mut push = |setting: Setting, method: String, t: usize, stat: &str, value: String| {
        records.push(vec![setting.to_string(), method, t.to_string(), stat.to_string(), value]);
    };
    for &setting in &settings {
        for &t_len in &lengths {
            let mut cfg = StudyConfig::new(setting, args.m, args.n, t_len, args.reps, args.seed);
            cfg.rho = args.rho;
            cfg.burn_in = args.burn_in;
            cfg.fit = fit_opts.clone();
            match args.study.as_str() {
                "errors" => {
                    let study = estimation_error_study(&cfg)?;
                    for e in ESTIMATORS {
                        let failures = study.failures.iter().find(|(k, _)| *k == e).map_or(0, |f| f.1);
                        if let Some(b) = box_summary(study.errors_for(e)) {
                            for (stat, v) in [
                                ("min", b.min),
                                ("q1", b.q1),
                                ("median", b.median),
                                ("q3", b.q3),
                                ("max", b.max),
                                ("mean", b.mean),
                            ] {
                                push(setting, e.to_string(), t_len, stat, fmt_f64(v));
                            }
                        }
                        push(setting, e.to_string(), t_len, "failures", failures.to_string());
                    }
                }
                "coverage" => {
                    for c in coverage_study(&cfg, &[Method::Proj, Method::Lse, Method::Mle], args.level)? {
                        let name = c.method.to_string();
                        push(setting, name.clone(), t_len, "stacked_coverage", fmt_f64(c.stacked_rate()));
                        push(setting, name.clone(), t_len, "kron_coverage", fmt_f64(c.kron_rate()));
                        push(setting, name, t_len, "failures", c.failures.to_string());
                    }
                }
                "spec" => {
                    for &eta in &etas {
                        let r = spec_test_study(&cfg, eta, args.alpha)?;
                        let name = format!("eta={eta}");
                        push(setting, name.clone(), t_len, "rejection_rate", fmt_f64(r.rate()));
                        push(setting, name.clone(), t_len, "mean_statistic", fmt_f64(r.mean_statistic));
                        push(setting, name.clone(), t_len, "df", r.df.to_string());
                        push(setting, name, t_len, "failures", r.failures.to_string());
                    }
                }
                "efficiency" => {
                    let ratios = efficiency_study(&cfg)?;
                    let b = box_summary(&ratios).expect("at least one replication");
                    let ok = ratios.iter().filter(|&&r| r >= -0.05).count() as f64 / ratios.len() as f64;
                    let name = "LSE-MLEs".to_string();
                    for (stat, v) in [("min_eig_ratio_min", b.min), ("min_eig_ratio_median", b.median)] {
                        push(setting, name.clone(), t_len, stat, fmt_f64(v));
                    }
                    push(setting, name, t_len, "fraction_psd_within_0.05", fmt_f64(ok));
                }
                other => {
                    return Err(usage(format!(
                        "unknown study '{other}', expected errors, coverage, spec or efficiency"
                    )))
                }
            }
        }
    }
    let n = records.len();
    let table = csv_table(&["setting", "method", "T", "stat", "value"], records)?;
    Ok((table, format!("{} study: {n} summary rows\n", args.study)))
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write, flags: &BTreeMap<String, String>) -> Result<()> {
    let setting: Setting = args.setting.parse()?;
    if args.m == 0 || args.n == 0 || args.t_len == 0 {
        return Err(usage("m, n and T must be positive"));
    }
    if !(args.rho > 0.0 && args.rho < 1.0) {
        return Err(usage(format!("rho must lie in (0, 1), got {}", args.rho)));
    }
    let model: MarModel =
        random_model(args.m, args.n, args.rho, args.seed)?.with_cov(random_covariance(setting, args.m, args.n, args.seed)?)?;
    let series = simulate(&model, args.t_len, args.burn_in, args.seed)?;
    let mut buf = Vec::new();
    write_series(&series, &mut buf)?;
    match &args.out {
        Some(path) => {
            fs::write(path, &buf)?;
            let mut extra = serde_json::Map::new();
            extra.insert(
                "model".into(),
                json!({
                    "a": matrix_json(model.a()),
                    "b": matrix_json(model.b()),
                    "sigma": matrix_json(&model.sigma()),
                }),
            );
            let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            fs::write(
                path.with_extension("manifest.json"),
                manifest("simulate", Some(args.seed), flags, &[&name], extra),
            )?;
        }
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

/// Long flags accepted by a subcommand, used to validate config keys.
fn known_flags(sub: &str) -> Option<BTreeSet<String>> {
    use clap::CommandFactory;
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(sub)?;
    Some(sc.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect())
}

fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {} is not key=value: '{line}'", k + 1)))?;
        out.push((key.trim().replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}

fn flag_name(token: &str) -> Option<&str> {
    let rest = token.strip_prefix("--")?;
    Some(rest.split_once('=').map_or(rest, |(k, _)| k))
}

/// Inserts config-file entries for flags absent from `argv`, right after
/// the subcommand name.
fn merge_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(tok) = it.next() {
        if tok == "--config" {
            config = Some(it.next().ok_or_else(|| usage("--config needs a file"))?);
        } else if let Some(p) = tok.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(tok);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let Some(sub_pos) = rest.iter().skip(1).position(|t| !t.starts_with('-')).map(|p| p + 1) else {
        return Ok(rest);
    };
    let known = known_flags(&rest[sub_pos]).ok_or_else(|| usage(format!("unknown command '{}'", rest[sub_pos])))?;
    let given: BTreeSet<String> = rest.iter().filter_map(|t| flag_name(t)).map(str::to_string).collect();
    let mut injected = Vec::new();
    for (key, value) in read_config(Path::new(&path))? {
        if !known.contains(&key) {
            return Err(usage(format!("config key '{key}' is not a flag of '{}'", rest[sub_pos])));
        }
        if given.contains(&key) {
            continue;
        }
        match value.to_ascii_lowercase().as_str() {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => {
                injected.push(format!("--{key}"));
                injected.push(value);
            }
        }
    }
    rest.splice(sub_pos + 1..sub_pos + 1, injected);
    Ok(rest)
}

/// Flags recorded in the manifest; output locations are left out so that
/// identical runs into different directories produce identical files.
fn recorded_flags(matches: &clap::ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Some((_, sub)) = matches.subcommand() {
        for id in sub.ids() {
            let name = id.as_str();
            // Skip output locations and the ids of flattened argument groups.
            if matches!(name, "out" | "out_dir" | "config") || name.starts_with(char::is_uppercase) {
                continue;
            }
            if let Ok(Some(vals)) = sub.try_get_raw(name) {
                let v: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
                out.insert(name.to_string(), v.join(";"));
            }
        }
    }
    out
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| MarError::Numeric(format!("could not start worker threads: {e}")))
}

fn exit_code(e: &MarError) -> i32 {
    match e {
        MarError::Config(_) => 2,
        _ => 1,
    }
}

/// Runs the CLI with `argv` (program name first), writing to the given
/// streams. Returns the process exit code.
pub fn run_cli_with(argv: Vec<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    let matches = match <Cli as clap::CommandFactory>::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return 2;
        }
    };
    let flags = recorded_flags(&matches);
    let result = dispatch(&cli.command, flags, stdout, stderr);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(
    command: &Command,
    flags: BTreeMap<String, String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let name = match command {
        Command::Simulate(a) => return cmd_simulate(a, stdout, &flags),
        Command::Fit(_) => "fit",
        Command::Test(_) => "test",
        Command::Irf(_) => "irf",
        Command::Forecast(_) => "forecast",
        Command::Experiment(_) => "experiment",
    };
    let mut out = Outputs {
        command: name,
        seed: None,
        flags,
        files: Vec::new(),
        extra: serde_json::Map::new(),
        stdout,
    };
    let (summary, dir) = match command {
        Command::Fit(a) => (cmd_fit(a, &mut out, stderr)?, &a.out.out_dir),
        Command::Test(a) => (cmd_test(a, &mut out, stderr)?, &a.out.out_dir),
        Command::Irf(a) => (cmd_irf(a, &mut out, stderr)?, &a.out.out_dir),
        Command::Forecast(a) => (cmd_forecast(a, &mut out)?, &a.out.out_dir),
        Command::Experiment(a) => {
            let pool = thread_pool()?;
            let (table, summary) = pool.install(|| cmd_experiment(a))?;
            out.seed = Some(a.seed);
            out.add("experiment.csv", table);
            (Some(summary), &a.out.out_dir)
        }
        Command::Simulate(_) => unreachable!("handled above"),
    };
    out.finish(dir.as_deref(), summary)
}

pub fn run_cli(argv: Vec<String>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
