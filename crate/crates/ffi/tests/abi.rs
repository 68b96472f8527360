use std::ffi::{CStr, CString};
use std::ptr;

use distobs_ffi::*;

const EXAMPLE: &str = include_str!("../../core/examples/six_agents.json");

fn take(s: *mut std::ffi::c_char) -> serde_json::Value {
    assert!(!s.is_null());
    let v = serde_json::from_str(unsafe { CStr::from_ptr(s) }.to_str().unwrap()).unwrap();
    unsafe { distobs_string_free(s) };
    v
}

fn last_error() -> String {
    let p = distobs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(json: &str) -> (DistobsStatus, *mut DistobsProblem) {
    let c = CString::new(json).unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { distobs_problem_from_json(c.as_ptr(), &mut h) };
    (s, h)
}

#[test]
fn example_round_trip() {
    let (s, h) = load(EXAMPLE);
    assert_eq!(s, DistobsStatus::Ok);
    unsafe {
        assert_eq!(distobs_problem_state_dim(h), 9);
        assert_eq!(distobs_problem_agents(h), 6);

        let mut out = ptr::null_mut();
        assert_eq!(distobs_analyze(h, 0, &mut out), DistobsStatus::Ok);
        let r = take(out);
        assert_eq!(r["strategy"], 1);
        assert_eq!(r["classification"]["blocks"][0]["V"]["3"], serde_json::json!([1, 6]));

        let seed = 7u64;
        assert_eq!(distobs_simulate(h, 2, &seed, &mut out), DistobsStatus::Ok);
        let r = take(out);
        assert_eq!(r["design"]["agents"][1]["order"], 14);
        assert!(r["simulation"]["metrics"].as_array().unwrap().iter().all(|m| m["converged"] == true));

        assert_eq!(distobs_verify(h, 20, 3, &mut out), DistobsStatus::Ok);
        let r = take(out);
        assert_eq!(r["verification"]["passed"], true);

        distobs_problem_free(h);
    }
}

#[test]
fn malformed_config_reports_the_key() {
    let (s, h) = load(r#"{"system": {"eigens": 3}, "agents": [], "network": {"adjacency": []}}"#);
    assert_eq!(s, DistobsStatus::Input);
    assert!(h.is_null());
    assert!(last_error().contains("system.eigens"));
}

#[test]
fn null_and_bad_arguments() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { distobs_problem_from_json(ptr::null(), &mut h) }, DistobsStatus::NullPointer);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { distobs_analyze(ptr::null(), 0, &mut out) }, DistobsStatus::NullPointer);
    let (_, loaded) = load(EXAMPLE);
    assert_eq!(unsafe { distobs_analyze(loaded, 7, &mut out) }, DistobsStatus::InvalidArgument);
    assert!(out.is_null());
    unsafe {
        distobs_problem_free(loaded);
        distobs_problem_free(ptr::null_mut());
        distobs_string_free(ptr::null_mut());
    }
    let bytes = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { distobs_problem_from_json(bytes.as_ptr().cast(), &mut h) },
        DistobsStatus::InvalidUtf8
    );
}

#[test]
fn infeasible_analysis_still_returns_a_report() {
    // cut every edge into agents 3..5, which cannot see block (1,1) fully
    let mut cfg: serde_json::Value = serde_json::from_str(EXAMPLE).unwrap();
    let adj = cfg["network"]["adjacency"].as_array_mut().unwrap();
    for row in adj.iter_mut() {
        for w in row.as_array_mut().unwrap() {
            *w = serde_json::json!(0.0);
        }
    }
    let (s, h) = load(&cfg.to_string());
    assert_eq!(s, DistobsStatus::Ok);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { distobs_analyze(h, 0, &mut out) }, DistobsStatus::Infeasible);
    let r = take(out);
    assert_eq!(r["solvability"]["strategy2_feasible"], false);
    assert!(last_error().contains("spanning forest"));
    unsafe { distobs_problem_free(h) };
}

#[test]
fn schur_radius_and_gain_interval() {
    let m = [0.5, 1.0, 0.0, 0.5];
    let mut r = 0.0;
    assert_eq!(unsafe { distobs_schur_radius(m.as_ptr(), 2, &mut r) }, DistobsStatus::Ok);
    assert!((r - 0.5).abs() < 1e-12);

    let re = [1.8, 0.3704, 2.4296, 0.9, 1.2];
    let im = [0.0; 5];
    let (mut lo, mut hi, mut empty) = (f64::NAN, f64::NAN, -1);
    let s = unsafe { distobs_feasible_gain(re.as_ptr(), im.as_ptr(), 5, 1.0, &mut lo, &mut hi, &mut empty) };
    assert_eq!(s, DistobsStatus::Ok);
    assert_eq!(empty, 0);
    assert_eq!(lo, 0.0);
    assert!((hi - 2.0 / 2.4296).abs() < 1e-12);

    let s = unsafe { distobs_feasible_gain(re.as_ptr(), im.as_ptr(), 5, 0.5, &mut lo, &mut hi, &mut empty) };
    assert_eq!(s, DistobsStatus::InvalidArgument);
}

#[test]
fn errors_are_thread_local() {
    let (s, _) = load("not json");
    assert_eq!(s, DistobsStatus::Input);
    std::thread::spawn(|| assert!(distobs_last_error().is_null())).join().unwrap();
    assert!(!last_error().is_empty());
}
