use std::ffi::CStr;
use std::ptr;

use ssm_pnc::em::rate_location;
use ssm_pnc::workparam::w_opt_location;
use ssm_pnc::{log_likelihood, model::simulate, ModelParams};
use ssm_pnc_ffi::*;

const TRUTH: SsmParams = SsmParams { mu: 1.0, sigma_eta_sq: 0.1, sigma_eps_sq: 0.1, phi: 0.5 };

fn truth() -> ModelParams {
    ModelParams::new(TRUTH.mu, TRUTH.sigma_eta_sq, TRUTH.sigma_eps_sq, TRUTH.phi).unwrap()
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe { ssm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn simulated(n: usize, seed: u64) -> *mut SsmSeries {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ssm_series_simulate(&TRUTH, n, seed, &mut s) }, SsmStatus::Ok);
    s
}

#[test]
fn series_round_trip() {
    let values = [0.5, 1.5, -0.25, 2.0];
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(ssm_series_new(values.as_ptr(), values.len(), &mut s), SsmStatus::Ok);
        assert_eq!(ssm_series_len(s), 4);
        let mut back = [0.0; 4];
        assert_eq!(ssm_series_copy_values(s, back.as_mut_ptr(), 4), SsmStatus::Ok);
        assert_eq!(back, values);
        let mut short = [0.0; 3];
        assert_eq!(ssm_series_copy_values(s, short.as_mut_ptr(), 3), SsmStatus::LengthMismatch);
        ssm_series_free(s);
    }
}

#[test]
fn simulation_matches_core() {
    let s = simulated(50, 7);
    let core = simulate(&truth(), 50, 7).unwrap();
    let mut got = vec![0.0; 50];
    unsafe {
        assert_eq!(ssm_series_copy_values(s, got.as_mut_ptr(), 50), SsmStatus::Ok);
        let mut ll = 0.0;
        assert_eq!(ssm_log_likelihood(&TRUTH, s, &mut ll), SsmStatus::Ok);
        assert_eq!(ll, log_likelihood(&truth(), &core).unwrap());
        ssm_series_free(s);
    }
    assert_eq!(got, core.values());
}

#[test]
fn weights_and_rate_match_core() {
    let mut w = vec![0.0; 20];
    let mut r = 0.0;
    unsafe {
        assert_eq!(ssm_w_opt_location(&TRUTH, 20, w.as_mut_ptr()), SsmStatus::Ok);
        assert_eq!(ssm_rate_location(&TRUTH, w.as_ptr(), 20, &mut r), SsmStatus::Ok);
    }
    assert_eq!(w, w_opt_location(&truth(), 20).unwrap());
    assert_eq!(r, rate_location(&truth(), &w).unwrap());
    assert!(r.abs() < 1e-8);
}

#[test]
fn fits_converge_and_expose_trajectories() {
    let s = simulated(300, 3);
    unsafe {
        for scheme in [SsmScheme::Centered, SsmScheme::Noncentered, SsmScheme::Partial] {
            let mut fit = ptr::null_mut();
            let st = ssm_fit_location(s, 0.0, &TRUTH, scheme as i32, 1e-8, 10_000, &mut fit);
            assert_eq!(st, SsmStatus::Ok, "{}", last_error());
            assert!(ssm_fit_converged(fit));
            let mut p = TRUTH;
            assert_eq!(ssm_fit_params(fit, &mut p), SsmStatus::Ok);
            assert!((p.mu - 1.0).abs() < 0.5);
            let len = ssm_fit_trajectory_len(fit);
            assert!(len >= 2);
            let mut ll = vec![0.0; len];
            assert_eq!(ssm_fit_copy_logliks(fit, ll.as_mut_ptr(), len), SsmStatus::Ok);
            assert_eq!(*ll.last().unwrap(), ssm_fit_loglik(fit));
            assert!(ll.windows(2).all(|p| p[1] >= p[0] - 1e-9 * p[0].abs()));
            ssm_fit_free(fit);
        }

        let mut fit = ptr::null_mut();
        let st = ssm_fit_scale(s, 0.5, &TRUTH, SsmScheme::Partial as i32, 1e-8, 10_000, &mut fit);
        assert_eq!(st, SsmStatus::Ok, "{}", last_error());
        assert!(ssm_fit_iterations(fit) >= 1);
        ssm_fit_free(fit);

        let mut fit = ptr::null_mut();
        let st = ssm_fit_all(s, ptr::null(), SsmScheme::Noncentered as i32, SsmScheme::Partial as i32, 1e-8, 10_000, &mut fit);
        assert_eq!(st, SsmStatus::Ok, "{}", last_error());
        let mut p = TRUTH;
        assert_eq!(ssm_fit_params(fit, &mut p), SsmStatus::Ok);
        assert!(p.phi > -1.0 && p.phi < 1.0);
        ssm_fit_free(fit);
        ssm_series_free(s);
    }
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let s = simulated(30, 1);
    unsafe {
        let mut ll = 0.0;
        assert_eq!(ssm_log_likelihood(ptr::null(), s, &mut ll), SsmStatus::NullPointer);
        assert!(last_error().contains("params"));
        assert_eq!(ssm_log_likelihood(&TRUTH, ptr::null(), &mut ll), SsmStatus::NullPointer);

        let bad = SsmParams { phi: 1.5, ..TRUTH };
        assert_eq!(ssm_log_likelihood(&bad, s, &mut ll), SsmStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        let mut fit = ptr::null_mut();
        assert_eq!(ssm_fit_location(s, 0.0, &TRUTH, 17, 1e-8, 100, &mut fit), SsmStatus::InvalidArgument);
        assert!(last_error().contains("17"));
        assert!(fit.is_null());
        assert_eq!(ssm_fit_location(s, 0.0, &TRUTH, -1, 1e-8, 100, &mut fit), SsmStatus::InvalidArgument);
        assert_eq!(ssm_fit_location(s, 0.0, &TRUTH, 0, -1.0, 100, &mut fit), SsmStatus::InvalidArgument);
        assert_eq!(ssm_fit_location(s, 0.0, &TRUTH, 0, 1e-8, 0, &mut fit), SsmStatus::InvalidArgument);

        let w = [0.5; 10];
        let mut r = 0.0;
        assert_eq!(ssm_rate_location(&TRUTH, w.as_ptr(), 10, &mut r), SsmStatus::Ok);
        assert!(last_error().is_empty());

        let mut series = ptr::null_mut();
        assert_eq!(ssm_series_new(ptr::null(), 5, &mut series), SsmStatus::NullPointer);
        let nan = [1.0, f64::NAN, 2.0];
        assert_ne!(ssm_series_new(nan.as_ptr(), 3, &mut series), SsmStatus::Ok);

        assert_eq!(ssm_series_len(ptr::null()), 0);
        assert_eq!(ssm_fit_iterations(ptr::null()), 0);
        ssm_series_free(ptr::null_mut());
        ssm_fit_free(ptr::null_mut());
        ssm_series_free(s);
    }
}

#[test]
fn last_error_truncates_to_buffer() {
    let mut fit = ptr::null_mut();
    unsafe {
        assert_eq!(ssm_fit_location(ptr::null(), 0.0, &TRUTH, 0, 1e-8, 10, &mut fit), SsmStatus::NullPointer);
        let needed = ssm_last_error_message(ptr::null_mut(), 0);
        assert!(needed > 4);
        let mut buf = [1 as std::ffi::c_char; 4];
        ssm_last_error_message(buf.as_mut_ptr(), 4);
        assert_eq!(buf[3], 0);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 3);
    }
}

#[test]
fn status_strings_are_static_and_distinct() {
    let all = [
        SsmStatus::Ok,
        SsmStatus::NullPointer,
        SsmStatus::InvalidArgument,
        SsmStatus::LengthMismatch,
        SsmStatus::NotPositiveDefinite,
        SsmStatus::NoRoot,
        SsmStatus::DegenerateScale,
        SsmStatus::Numerical,
        SsmStatus::Panic,
    ];
    let names: std::collections::HashSet<_> =
        all.iter().map(|s| unsafe { CStr::from_ptr(ssm_status_string(*s)) }.to_str().unwrap().to_owned()).collect();
    assert_eq!(names.len(), all.len());
}
