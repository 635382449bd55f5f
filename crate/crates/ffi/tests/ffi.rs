use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mar_kit_ffi::*;

fn last_error() -> String {
    unsafe {
        let len = mar_last_error_message(ptr::null_mut(), 0);
        let mut buf = vec![0 as c_char; len + 1];
        mar_last_error_message(buf.as_mut_ptr(), buf.len());
        let bytes: Vec<u8> = buf[..len].iter().map(|&c| c as u8).collect();
        String::from_utf8(bytes).unwrap()
    }
}

fn simulated(setting: MarSetting, t_len: usize, seed: u64) -> *mut MarSeries {
    let mut s = ptr::null_mut();
    let st = unsafe { mar_simulate(setting as i32, 3, 2, t_len, 0.5, 200, seed, &mut s) };
    assert_eq!(st, MarStatus::Ok, "{}", last_error());
    s
}

#[test]
fn simulate_fit_and_read_back() {
    unsafe {
        let s = simulated(MarSetting::Kronecker, 500, 3);
        let (mut m, mut n, mut t) = (0, 0, 0);
        assert_eq!(mar_series_dims(s, &mut m, &mut n, &mut t), MarStatus::Ok);
        assert_eq!((m, n, t), (3, 2, 500));

        let mut f = ptr::null_mut();
        assert_eq!(mar_fit(s, MarMethod::Mle as i32, 0, 0.0, &mut f), MarStatus::Ok, "{}", last_error());
        let (mut fm, mut fn_) = (0, 0);
        assert_eq!(mar_fit_dims(f, &mut fm, &mut fn_), MarStatus::Ok);
        assert_eq!((fm, fn_), (3, 2));

        let mut a = [0.0; 9];
        let mut b = [0.0; 4];
        assert_eq!(mar_fit_a(f, a.as_mut_ptr(), a.len()), MarStatus::Ok);
        assert_eq!(mar_fit_b(f, b.as_mut_ptr(), b.len()), MarStatus::Ok);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let mut converged = false;
        let mut iters = 0;
        assert_eq!(mar_fit_convergence(f, &mut converged, &mut iters), MarStatus::Ok);
        assert!(converged && iters >= 1);

        let horizon = 5;
        let mut irf = vec![0.0; (horizon + 1) * 6];
        assert_eq!(mar_irf(f, 1, 0, horizon, irf.as_mut_ptr(), irf.len()), MarStatus::Ok, "{}", last_error());
        // Lag-k response is A F(k-1) B^T.
        for k in 1..=horizon {
            let prev = &irf[(k - 1) * 6..k * 6];
            for j in 0..2 {
                for i in 0..3 {
                    let mut v = 0.0;
                    for p in 0..3 {
                        for q in 0..2 {
                            v += a[p * 3 + i] * prev[q * 3 + p] * b[q * 2 + j];
                        }
                    }
                    assert!((irf[k * 6 + j * 3 + i] - v).abs() < 1e-12);
                }
            }
        }

        mar_fit_free(f);
        mar_series_free(s);
    }
}

#[test]
fn series_new_get_and_csv_round_trip() {
    unsafe {
        let data: Vec<f64> = (0..24).map(|k| k as f64 * 0.5 - 3.0).collect();
        let mut s = ptr::null_mut();
        assert_eq!(mar_series_new(data.as_ptr(), 2, 3, 4, &mut s), MarStatus::Ok);

        let mut x = [0.0; 6];
        assert_eq!(mar_series_get(s, 2, x.as_mut_ptr(), 6), MarStatus::Ok);
        assert_eq!(&x[..], &data[12..18]);
        assert_eq!(mar_series_get(s, 4, x.as_mut_ptr(), 6), MarStatus::Index);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("s.csv").to_str().unwrap()).unwrap();
        assert_eq!(mar_series_save(s, path.as_ptr()), MarStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mar_series_load(path.as_ptr(), &mut back), MarStatus::Ok);
        for t in 0..4 {
            let mut y = [0.0; 6];
            assert_eq!(mar_series_get(back, t, y.as_mut_ptr(), 6), MarStatus::Ok);
            assert_eq!(&y[..], &data[t * 6..t * 6 + 6]);
        }
        mar_series_free(back);
        mar_series_free(s);
    }
}

#[test]
fn spec_test_reports_statistic() {
    unsafe {
        let s = simulated(MarSetting::Identity, 1000, 8);
        let (mut stat, mut df, mut p) = (0.0, 0, 0.0);
        assert_eq!(mar_spec_test(s, &mut stat, &mut df, &mut p), MarStatus::Ok);
        assert_eq!(df, 24);
        assert!(stat >= 0.0 && (0.0..=1.0).contains(&p));
        mar_series_free(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(mar_series_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), MarStatus::NullPointer);
        assert!(last_error().contains("null"));

        let missing = CString::new("/nonexistent/x.csv").unwrap();
        assert_eq!(mar_series_load(missing.as_ptr(), &mut s), MarStatus::Io);
        assert!(s.is_null());

        assert_eq!(mar_simulate(7, 3, 2, 10, 0.5, 0, 1, &mut s), MarStatus::InvalidArgument);
        assert_eq!(mar_simulate(1, 3, 2, 10, 1.5, 0, 1, &mut s), MarStatus::Precondition);

        let short = simulated(MarSetting::Identity, 5, 1);
        let mut f = ptr::null_mut();
        assert_eq!(mar_fit(short, MarMethod::Proj as i32, 0, 0.0, &mut f), MarStatus::RankDeficient);
        assert!(last_error().contains("mn=6"), "{}", last_error());
        assert_eq!(mar_fit(short, 9, 0, 0.0, &mut f), MarStatus::InvalidArgument);

        let ok = simulated(MarSetting::Identity, 200, 2);
        assert_eq!(mar_fit(ok, MarMethod::Lse as i32, 0, 0.0, &mut f), MarStatus::Ok);
        assert!(last_error().is_empty());
        let mut small = [0.0; 3];
        assert_eq!(mar_fit_a(f, small.as_mut_ptr(), small.len()), MarStatus::BufferTooSmall);
        assert_eq!(mar_irf(f, 5, 0, 2, small.as_mut_ptr(), small.len()), MarStatus::Index);

        mar_fit_free(f);
        mar_series_free(ok);
        mar_series_free(short);
        mar_series_free(ptr::null_mut());
        mar_fit_free(ptr::null_mut());
    }
}

#[test]
fn header_is_valid_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("mar_kit.h")).unwrap();
    for name in ["mar_series_new", "mar_fit", "mar_irf", "mar_spec_test", "mar_last_error_message", "MAR_STATUS_OK"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mar_kit.h\"\n\
         int main(void) {\n\
             void (*release)(MarSeries *) = mar_series_free;\n\
             MarStatus (*fit)(const MarSeries *, int32_t, size_t, double, MarFit **) = mar_fit;\n\
             (void)release;\n\
             (void)fit;\n\
             return MAR_METHOD_LSE != 1;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .expect("C compiler available");
    assert!(status.success());
}
