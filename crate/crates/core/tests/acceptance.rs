//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use mar_kit::cli::{run_cli_with, THREADS_ENV};
use mar_kit::estimators::lse_gradient;
use mar_kit::experiment::Estimator;
use mar_kit::experiment::{coverage_study, efficiency_study, estimation_error_study, spec_test_study, StudyConfig};
use mar_kit::kron::{kron, mat_pow, nkp_project, rearrange, unvec, vec, DenseMatrix, DenseVector};
use mar_kit::model::{autocovariance, irf_s1, random_covariance, random_model, simulate, DEFAULT_AUTOCOV_TOL};
use mar_kit::{fit_lse, fit_proj, fit_var1, CovarianceSpec, FitOptions, Init, MarModel, MatrixSeries, Method, Setting};
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn orthonormal(rng: &mut ChaCha8Rng, k: usize) -> DenseMatrix {
    gaussian(rng, k, k).qr().q()
}

fn rel(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    (x - y).norm() / y.norm().max(1.0)
}

fn numerical_rank(m: &DenseMatrix) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = f64::EPSILON * m.nrows().max(m.ncols()) as f64 * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

fn eigenvalues(m: &DenseMatrix) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest distance between two eigenvalue multisets under greedy nearest
/// matching.
fn multiset_gap(mut x: Vec<Complex<f64>>, y: &[Complex<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for v in y {
        let (idx, d) = x
            .iter()
            .enumerate()
            .map(|(i, u)| (i, (u - v).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        worst = worst.max(d);
        x.swap_remove(idx);
    }
    worst
}

fn noiseless(model: &MarModel, t_len: usize, rng: &mut ChaCha8Rng) -> MatrixSeries {
    let mut x = gaussian(rng, model.m(), model.n());
    let mut vals = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        vals.push(x.clone());
        x = model.a() * &x * model.b().transpose();
    }
    MatrixSeries::new(vals).unwrap()
}

fn sign_gap(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    (x - y).amax().min((x + y).amax())
}

fn kronecker_algebra() -> Outcome {
    const CASES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let dim = |rng: &mut ChaCha8Rng| rng.random_range(1..=4usize);
    let mut worst = [0.0f64; 8];
    for _ in 0..CASES {
        let (p, q, r, s, k, l) = (dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let c = gaussian(&mut rng, p, q);
        let d = gaussian(&mut rng, r, s);

        worst[0] = worst[0].max(rel(&kron(&c, &d).transpose(), &kron(&c.transpose(), &d.transpose())));

        let ci = gaussian(&mut rng, p, p) + DenseMatrix::identity(p, p) * (2.0 * p as f64);
        let di = gaussian(&mut rng, r, r) + DenseMatrix::identity(r, r) * (2.0 * r as f64);
        let lhs = kron(&ci, &di).try_inverse().unwrap();
        let rhs = kron(&ci.clone().try_inverse().unwrap(), &di.clone().try_inverse().unwrap());
        worst[1] = worst[1].max(rel(&lhs, &rhs));

        let f = gaussian(&mut rng, q, k);
        let g = gaussian(&mut rng, s, l);
        worst[2] = worst[2].max(rel(&(kron(&c, &d) * kron(&f, &g)), &kron(&(&c * &f), &(&d * &g))));

        let z = gaussian(&mut rng, q, r);
        let dd = gaussian(&mut rng, r, k);
        let lhs = vec(&(&c * &z * &dd));
        let rhs = kron(&dd.transpose(), &c) * vec(&z);
        worst[3] = worst[3].max((&lhs - &rhs).norm() / rhs.norm().max(1.0));

        let rc = rng.random_range(1..=p.min(q));
        let rd = rng.random_range(1..=r.min(s));
        let cl = gaussian(&mut rng, p, rc) * gaussian(&mut rng, rc, q);
        let dl = gaussian(&mut rng, r, rd) * gaussian(&mut rng, rd, s);
        let r1 = numerical_rank(&kron(&cl, &dl)) as f64;
        let r2 = numerical_rank(&kron(&dl, &cl)) as f64;
        let prod = (numerical_rank(&cl) * numerical_rank(&dl)) as f64;
        worst[4] = worst[4].max((r1 - prod).abs()).max((r2 - prod).abs());

        let cs = gaussian(&mut rng, p, p);
        let ds = gaussian(&mut rng, r, r);
        let lc = eigenvalues(&cs);
        let ld = eigenvalues(&ds);
        let products: Vec<Complex<f64>> = lc.iter().flat_map(|x| ld.iter().map(move |y| x * y)).collect();
        let scale = products.iter().map(|z| z.norm()).fold(1.0, f64::max);
        worst[5] = worst[5].max(multiset_gap(eigenvalues(&kron(&cs, &ds)), &products) / scale);

        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let a = gaussian(&mut rng, m, m);
        let b = gaussian(&mut rng, n, n);
        let g = rearrange(&kron(&b, &a), m, n).unwrap();
        let outer = vec(&a) * vec(&b).transpose();
        worst[6] = worst[6].max(rel(&g, &outer));

        let phi = gaussian(&mut rng, m * n, m * n);
        let gn = rearrange(&phi, m, n).unwrap().norm();
        worst[7] = worst[7].max((gn - phi.norm()).abs() / phi.norm());
    }
    let names = ["(i)", "(ii)", "(iii)", "(iv)", "(v)", "(vi)", "G(BxA)", "norm"];
    let max = worst.iter().copied().fold(0.0, f64::max);
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n}={w:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(max < 1e-10, format!("{CASES} cases each, max violation {max:.2e} < 1e-10; {detail}"))
}

fn exact_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    let mut check = |name: &str, value: f64, tol: f64| {
        if !(value < tol) {
            failures.push(format!("{name}: {value:.2e} >= {tol:.0e}"));
        }
    };

    for _ in 0..20 {
        let mut a = gaussian(&mut rng, 2, 2);
        a /= a.norm();
        let b = gaussian(&mut rng, 3, 3);
        let phi = kron(&b, &a);
        let terms = nkp_project(&phi, 2, 3, 1).unwrap();
        check("NKP exact Kronecker", (terms.reconstruct() - &phi).norm(), 1e-12);
    }

    // Scaled orthonormal factors keep the noiseless trajectory full rank and
    // undamped, so the exact fits are well identified.
    let full_rank_model = |rng: &mut ChaCha8Rng| {
        let q1 = orthonormal(rng, 3);
        let q2 = orthonormal(rng, 2);
        MarModel::new(&q1 / q1.norm(), q2 * (0.95 * 3f64.sqrt()), CovarianceSpec::Identity).unwrap()
    };
    for _ in 0..5 {
        let model = full_rank_model(&mut rng);
        let s = noiseless(&model, 12, &mut rng);
        let v = fit_var1(&s).unwrap();
        check("VAR1 noiseless", (&v.phi_hat - model.phi()).amax(), 1e-10);
        check("VAR1 noiseless sigma", v.sigma_hat.amax(), 1e-12);

        let p = fit_proj(&s).unwrap();
        check("PROJ noiseless A", sign_gap(p.a(), model.a()), 1e-8);
        check("PROJ noiseless B", sign_gap(p.b(), model.b()), 1e-8);
    }

    for seed in 0..5 {
        let model = random_model(3, 2, 0.8, seed).unwrap();
        let s = noiseless(&model, 24, &mut rng);
        let one_step = FitOptions {
            max_iter: 1,
            init: Init::Provided(model.a().clone(), model.b().clone()),
            ..FitOptions::default()
        };
        let f = fit_lse(&s, &one_step).unwrap();
        check("LSE fixed point A", (f.a() - model.a()).amax(), 1e-12);
        check("LSE fixed point B", (f.b() - model.b()).amax(), 1e-12);
    }

    for seed in 0..3 {
        let model = full_rank_model(&mut rng);
        let s = noiseless(&model, 30, &mut rng);
        let opts = FitOptions {
            init: Init::Identity,
            ..FitOptions::default()
        };
        let f = fit_lse(&s, &opts).unwrap();
        check(&format!("LSE identity start objective (seed {seed})"), *f.objective_trace.last().unwrap(), 1e-16);
        check("LSE identity start A", sign_gap(f.a(), model.a()), 1e-6);
        check("LSE identity start B", sign_gap(f.b(), model.b()), 1e-6);
    }

    for seed in 0..5 {
        let model = random_model(3, 2, 0.5, 50 + seed).unwrap();
        let s = simulate(&model, 400, 100, 60 + seed).unwrap();
        let tight = FitOptions {
            rel_tol: 1e-12,
            max_iter: 5000,
            ..FitOptions::default()
        };
        let f = fit_lse(&s, &tight).unwrap();
        let (ga, gb) = lse_gradient(&s, f.a(), f.b());
        // The gradient is quadratic in the data; scale by its energy.
        let energy: f64 = s.values().iter().map(|x| x.norm_squared()).sum();
        check("LSE gradient A", ga.norm() / energy, 1e-6);
        check("LSE gradient B", gb.norm() / energy, 1e-6);
    }

    if failures.is_empty() {
        outcome(
            true,
            "NKP, VAR1, PROJ, LSE noiseless recovery and LSE gradient conditions within stated tolerances",
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

fn estimator_ordering() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (si, setting) in [Setting::I, Setting::II, Setting::III].into_iter().enumerate() {
        for (ti, t_len) in [400usize, 2000].into_iter().enumerate() {
            let cfg = StudyConfig::new(setting, 3, 2, t_len, 100, 3000 + 100 * si as u64 + 10 * ti as u64);
            let study = estimation_error_study(&cfg).unwrap();
            let proj = study.median(Estimator::Mar(Method::Proj)).unwrap();
            let lse = study.median(Estimator::Mar(Method::Lse)).unwrap();
            let mle = study.median(Estimator::Mar(Method::Mle)).unwrap();
            let mut good = proj > lse;
            if setting == Setting::III {
                good &= lse >= mle * 0.9;
                if t_len == 2000 {
                    good &= mle < lse;
                }
            }
            ok &= good;
            parts.push(format!(
                "{setting}/T={t_len}: PROJ {proj:.2e} LSE {lse:.2e} MLEs {mle:.2e}{}",
                if good { "" } else { " (violated)" }
            ));
        }
    }
    outcome(ok, format!("median errors, 100 reps: {}", parts.join("; ")))
}

fn coverage() -> Outcome {
    let cfg = StudyConfig::new(Setting::I, 3, 2, 1000, 1000, 4000);
    let first = coverage_study(&cfg, &[Method::Proj, Method::Lse, Method::Mle], 0.95).unwrap();
    let cfg3 = StudyConfig::new(Setting::III, 3, 2, 1000, 1000, 4100);
    let third = coverage_study(&cfg3, &[Method::Mle], 0.95).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for c in &first {
        let r = c.stacked_rate();
        ok &= (0.93..=0.97).contains(&r);
        parts.push(format!("I/{} {r:.3}", c.method));
    }
    let r = third[0].stacked_rate();
    ok &= (0.92..=0.97).contains(&r);
    parts.push(format!("III/MLEs {r:.3}"));
    outcome(
        ok,
        format!(
            "95% stacked coverage, T=1000, 1000 reps: {} (targets I in [0.93,0.97], III in [0.92,0.97])",
            parts.join(", ")
        ),
    )
}

fn spec_test() -> Outcome {
    let cfg = StudyConfig::new(Setting::I, 3, 2, 2000, 1000, 5000);
    let size = spec_test_study(&cfg, 0.0, 0.05).unwrap();
    let power = spec_test_study(&cfg, 0.5, 0.05).unwrap();
    let ok = (0.03..=0.07).contains(&size.rate()) && power.rate() > 0.9;
    outcome(
        ok,
        format!(
            "T=2000, 1000 reps: size {:.3} in [0.03,0.07], power at eta=0.5 {:.3} > 0.9 (failed fits {}+{})",
            size.rate(),
            power.rate(),
            size.failures,
            power.failures
        ),
    )
}

fn autocovariance_consistency() -> Outcome {
    let mut worst_lyap: f64 = 0.0;
    for seed in 0..5 {
        let model = random_model(2, 2, 0.8, 600 + seed)
            .unwrap()
            .with_cov(random_covariance(Setting::II, 2, 2, 610 + seed).unwrap())
            .unwrap();
        let g0 = autocovariance(&model, 0, DEFAULT_AUTOCOV_TOL).unwrap();
        let phi = model.phi();
        let k = phi.nrows();
        let lhs = DenseMatrix::identity(k * k, k * k) - kron(&phi, &phi);
        let sol = lhs.lu().solve(&vec(&model.sigma())).unwrap();
        let oracle = unvec(&sol, k, k).unwrap();
        worst_lyap = worst_lyap.max(rel(&g0, &oracle));
    }

    let model = random_model(3, 2, 0.5, 620)
        .unwrap()
        .with_cov(random_covariance(Setting::III, 3, 2, 621).unwrap())
        .unwrap();
    let g0 = autocovariance(&model, 0, DEFAULT_AUTOCOV_TOL).unwrap();
    let s = simulate(&model, 50_000, 500, 622).unwrap();
    let mut sample = DenseMatrix::zeros(6, 6);
    for x in s.values() {
        let v: DenseVector = vec(x);
        sample += &v * v.transpose();
    }
    sample /= s.len() as f64;
    let sim_err = (&sample - &g0).norm() / g0.norm();
    outcome(
        worst_lyap < 1e-8 && sim_err < 0.05,
        format!("vs Lyapunov solve {worst_lyap:.2e} < 1e-8; vs 50k-sample simulation {sim_err:.3} < 0.05"),
    )
}

fn efficiency() -> Outcome {
    let cfg = StudyConfig::new(Setting::III, 3, 2, 2000, 50, 7000);
    let ratios = efficiency_study(&cfg).unwrap();
    let good = ratios.iter().filter(|&&r| r >= -0.05).count();
    let frac = good as f64 / ratios.len() as f64;
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        frac >= 0.9 && ratios.len() == 50,
        format!(
            "min eig(Xi2 - Xi3) >= -0.05 tr(Xi2) in {good}/{} reps ({frac:.2} >= 0.90), worst ratio {min:.2e}",
            ratios.len()
        ),
    )
}

fn irf_rank_one() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_factor: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for seed in 0..50u64 {
        let m = rng.random_range(1..=4usize);
        let n = rng.random_range(1..=4usize);
        let model = random_model(m, n, 0.9, 800 + seed)
            .unwrap()
            .with_cov(random_covariance(Setting::III, m, n, 900 + seed).unwrap())
            .unwrap();
        let (i, j) = (rng.random_range(0..m), rng.random_range(0..n));
        let r = irf_s1(&model, i, j, 20).unwrap();
        let fac = r.factored.as_ref().expect("Kronecker covariance gives a factored response");
        let sigma = model.sigma();
        let c = j * m + i;
        let col = sigma.column(c).into_owned() / sigma[(c, c)].sqrt();
        for k in 0..=20 {
            let outer = &fac.row_resp[k] * fac.col_resp[k].transpose();
            worst_factor = worst_factor.max((&r.responses[k] - &outer).amax());
            let oracle = unvec(&(kron(&mat_pow(model.b(), k), &mat_pow(model.a(), k)) * &col), m, n).unwrap();
            worst_oracle = worst_oracle.max((&r.responses[k] - oracle).amax());
        }
    }
    outcome(
        worst_factor < 1e-12 && worst_oracle < 1e-12,
        format!(
            "50 models, k <= 20: |F(k) - row x col| max {worst_factor:.2e}, vs direct Kronecker power {worst_oracle:.2e} (< 1e-12)"
        ),
    )
}

fn run(args: &[&str]) -> (i32, Vec<u8>, Vec<u8>) {
    let argv = std::iter::once("mar-kit").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli_with(argv, &mut out, &mut err);
    (code, out, err)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let mut mismatches = Vec::new();
    let mut errors = Vec::new();

    for k in 0..2 {
        fs::create_dir(root.join(format!("sim{k}"))).unwrap();
        let (code, _, err) = run(&["simulate", "--setting", "III", "--T", "300", "--seed", "9", "--out", &p(&format!("sim{k}/series.csv"))]);
        if code != 0 {
            errors.push(format!("simulate: {}", String::from_utf8_lossy(&err)));
        }
    }
    if dir_bytes(&root.join("sim0")) != dir_bytes(&root.join("sim1")) {
        mismatches.push("simulate".to_string());
    }
    let data = p("sim0/series.csv");

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("fit proj", vec!["fit", &data, "--method", "proj"]),
        ("fit lse", vec!["fit", &data, "--method", "lse"]),
        ("fit mle", vec!["fit", &data, "--method", "mle"]),
        ("fit var1", vec!["fit", &data, "--method", "var1"]),
        ("test", vec!["test", &data]),
        ("irf", vec!["irf", &data, "--shock", "2,1", "--horizon", "8"]),
        ("forecast", vec!["forecast", &data, "--start", "280"]),
        ("experiment errors", vec!["experiment", "--study", "errors", "--reps", "6", "--T", "200", "--seed", "3"]),
        ("experiment coverage", vec!["experiment", "--study", "coverage", "--reps", "4", "--T", "200", "--seed", "3"]),
        ("experiment spec", vec!["experiment", "--study", "spec", "--reps", "6", "--T", "200", "--eta", "0,0.5"]),
        ("experiment efficiency", vec!["experiment", "--study", "efficiency", "--setting", "III", "--reps", "4", "--T", "300"]),
    ];
    for (idx, (name, args)) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for k in 0..2 {
            // Vary the worker count between the two runs of each command.
            std::env::set_var(THREADS_ENV, (k + 1).to_string());
            let dir = p(&format!("out{idx}_{k}"));
            let mut full = args.clone();
            full.extend(["--out-dir", &dir]);
            let (code, stdout, err) = run(&full);
            if code != 0 {
                errors.push(format!("{name}: {}", String::from_utf8_lossy(&err).trim()));
            }
            let (_, plain, _) = run(args);
            outputs.push((dir_bytes(Path::new(&dir)), stdout, plain));
        }
        if outputs[0] != outputs[1] {
            mismatches.push(name.to_string());
        }
    }
    std::env::remove_var(THREADS_ENV);

    let total = commands.len() + 1;
    if !errors.is_empty() {
        return outcome(false, format!("command errors: {}", errors.join(" | ")));
    }
    if mismatches.is_empty() {
        outcome(true, format!("{total} seeded commands run twice: byte-identical files and stdout"))
    } else {
        outcome(false, format!("outputs differ for: {}", mismatches.join(", ")))
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("Kronecker algebra properties", Duration::from_secs(5), kronecker_algebra),
        ("exact recovery", Duration::from_secs(10), exact_recovery),
        ("estimator ordering", Duration::from_secs(300), estimator_ordering),
        ("confidence interval coverage", Duration::from_secs(600), coverage),
        ("specification test size and power", Duration::from_secs(600), spec_test),
        ("autocovariance consistency", Duration::from_secs(30), autocovariance_consistency),
        ("efficiency ordering", Duration::from_secs(180), efficiency),
        ("IRF rank-one form", Duration::from_secs(10), irf_rank_one),
        ("CLI determinism", Duration::MAX, determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (idx, (name, budget, check)) in criteria.into_iter().enumerate() {
        let number = idx + 1;
        if !filter.is_empty() && !filter.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = if budget == Duration::MAX {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s / {}s budget", elapsed.as_secs_f64(), budget.as_secs())
        };
        println!(
            "criterion {number} {name}: {} [{timing}] {}",
            if pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
