//! C ABI over the `distobs` pipeline.
//!
//! Problems are opaque handles created from a JSON configuration. Commands
//! return a [`DistobsStatus`] mirroring the CLI exit codes and hand back the
//! JSON report as a heap string that must be released with
//! [`distobs_string_free`]. The message of the last failure on the calling
//! thread is available from [`distobs_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use distobs::cli::{analyze, design, run_simulation, verify, Outcome, RunOptions};
use distobs::config::{ProblemConfig, StrategyChoice};
use distobs::{Error, ExitCode};
use num_complex::Complex64;

/// Status codes; 0 to 4 match the exit codes of the `distobs` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistobsStatus {
    Ok = 0,
    Input = 1,
    Infeasible = 2,
    Divergence = 3,
    OracleMismatch = 4,
    NullPointer = 10,
    InvalidUtf8 = 11,
    InvalidArgument = 12,
    Panic = 13,
}

impl From<ExitCode> for DistobsStatus {
    fn from(c: ExitCode) -> Self {
        match c {
            ExitCode::Ok => DistobsStatus::Ok,
            ExitCode::Input => DistobsStatus::Input,
            ExitCode::Infeasible => DistobsStatus::Infeasible,
            ExitCode::Divergence => DistobsStatus::Divergence,
            ExitCode::OracleMismatch => DistobsStatus::OracleMismatch,
        }
    }
}

/// A validated problem configuration.
pub struct DistobsProblem {
    config: ProblemConfig,
    n: usize,
    agents: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: DistobsStatus, msg: impl Into<String>) -> DistobsStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> DistobsStatus {
    fail(e.exit_code().into(), e.to_string())
}

fn guard(f: impl FnOnce() -> DistobsStatus) -> DistobsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DistobsStatus::Panic, "internal panic"),
    }
}

fn strategy_choice(strategy: i32) -> Option<StrategyChoice> {
    match strategy {
        0 => Some(StrategyChoice::Auto),
        1 => Some(StrategyChoice::One),
        2 => Some(StrategyChoice::Two),
        _ => None,
    }
}

/// Writes the report (when any) to `out` and maps the outcome to a status.
///
/// # Safety
/// `out` must be valid for a pointer write.
unsafe fn finish(outcome: Outcome, out: *mut *mut c_char) -> DistobsStatus {
    if let Some(r) = &outcome.report {
        let s = CString::new(r.to_json()).expect("JSON has no nul bytes");
        *out = s.into_raw();
    }
    match &outcome.error {
        None => DistobsStatus::Ok,
        Some(e) => from_error(e),
    }
}

/// Parses and validates a JSON configuration.
///
/// On success `*out` receives a handle to release with [`distobs_problem_free`].
///
/// # Safety
/// `json` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_problem_from_json(json: *const c_char, out: *mut *mut DistobsProblem) -> DistobsStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(DistobsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(DistobsStatus::InvalidUtf8, "configuration is not valid UTF-8");
        };
        let config = match ProblemConfig::from_json_str(text) {
            Ok(c) => c,
            Err(e) => return from_error(&e),
        };
        match config.to_problem() {
            Ok(p) => {
                let h = DistobsProblem { n: p.n(), agents: p.n_agents(), config };
                *out = Box::into_raw(Box::new(h));
                DistobsStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `p` must come from [`distobs_problem_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn distobs_problem_free(p: *mut DistobsProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// State dimension of the plant, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn distobs_problem_state_dim(p: *const DistobsProblem) -> usize {
    p.as_ref().map_or(0, |h| h.n)
}

/// Number of agents, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn distobs_problem_agents(p: *const DistobsProblem) -> usize {
    p.as_ref().map_or(0, |h| h.agents)
}

type Command = fn(&ProblemConfig, &RunOptions) -> Outcome;

unsafe fn run_command(p: *const DistobsProblem, strategy: i32, seed: *const u64, out: *mut *mut c_char, cmd: Command) -> DistobsStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(DistobsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Some(choice) = strategy_choice(strategy) else {
            return fail(DistobsStatus::InvalidArgument, format!("strategy must be 0 (auto), 1 or 2, got {strategy}"));
        };
        let opts = RunOptions { strategy: Some(choice), seed: seed.as_ref().copied() };
        finish(cmd(&(*p).config, &opts), out)
    })
}

/// Classification and solvability report. `strategy` is 0 for auto, 1 or 2.
///
/// `*out` receives the JSON report whenever one was produced, including
/// for infeasible problems.
///
/// # Safety
/// `p` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_analyze(p: *const DistobsProblem, strategy: i32, out: *mut *mut c_char) -> DistobsStatus {
    run_command(p, strategy, ptr::null(), out, analyze)
}

/// Designs the observer bank and reports its dimensions and gains.
///
/// # Safety
/// `p` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_design(p: *const DistobsProblem, strategy: i32, out: *mut *mut c_char) -> DistobsStatus {
    run_command(p, strategy, ptr::null(), out, design)
}

/// Runs the simulation. `seed` may be null to use the configured seed.
///
/// # Safety
/// `p` must be a live handle, `seed` null or readable, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_simulate(
    p: *const DistobsProblem,
    strategy: i32,
    seed: *const u64,
    out: *mut *mut c_char,
) -> DistobsStatus {
    run_command(p, strategy, seed, out, run_simulation)
}

/// Oracle cross-check; `fuzz` extra random instances are checked with `seed`.
///
/// # Safety
/// `p` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_verify(p: *const DistobsProblem, fuzz: usize, seed: u64, out: *mut *mut c_char) -> DistobsStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(DistobsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let opts = RunOptions { strategy: None, seed: Some(seed) };
        finish(verify(&(*p).config, &opts, (fuzz > 0).then_some(fuzz)), out)
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn distobs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Spectral radius of the row-major `n` x `n` matrix at `data`.
///
/// # Safety
/// `data` must point to `n * n` doubles and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_schur_radius(data: *const f64, n: usize, out: *mut f64) -> DistobsStatus {
    guard(|| {
        if out.is_null() || (data.is_null() && n > 0) {
            return fail(DistobsStatus::NullPointer, "null argument");
        }
        let Some(len) = n.checked_mul(n) else {
            return fail(DistobsStatus::InvalidArgument, "matrix is too large");
        };
        let entries = if n == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        if entries.iter().any(|v| !v.is_finite()) {
            return fail(DistobsStatus::Input, "matrix has non-finite entries");
        }
        let m = distobs::linalg::from_rows(&entries.chunks(n.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>(), n);
        match distobs::solvability::schur_radius(&m) {
            Ok(r) => {
                *out = r;
                DistobsStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Open interval of gains k with |1 - k mu| < 1/|lambda| for every mu.
///
/// The spectrum is passed as parallel arrays of real and imaginary parts.
/// `*empty` is set to 1 when no gain works; infinite endpoints are returned
/// as IEEE infinities.
///
/// # Safety
/// `re` and `im` must point to `len` doubles; `lo`, `hi`, `empty` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn distobs_feasible_gain(
    re: *const f64,
    im: *const f64,
    len: usize,
    lambda: f64,
    lo: *mut f64,
    hi: *mut f64,
    empty: *mut i32,
) -> DistobsStatus {
    guard(|| {
        if lo.is_null() || hi.is_null() || empty.is_null() || (len > 0 && (re.is_null() || im.is_null())) {
            return fail(DistobsStatus::NullPointer, "null argument");
        }
        if !(lambda.abs() >= 1.0) || !lambda.is_finite() {
            return fail(DistobsStatus::InvalidArgument, "lambda must satisfy |lambda| >= 1");
        }
        let spectrum: Vec<Complex64> = if len == 0 {
            Vec::new()
        } else {
            let (r, i) = (std::slice::from_raw_parts(re, len), std::slice::from_raw_parts(im, len));
            r.iter().zip(i).map(|(&a, &b)| Complex64::new(a, b)).collect()
        };
        let g = distobs::solvability::feasible_gain(&spectrum, lambda);
        *lo = g.interval.lo;
        *hi = g.interval.hi;
        *empty = i32::from(g.interval.empty);
        if let Some(d) = g.diagnostic {
            set_error(d);
        }
        DistobsStatus::Ok
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn distobs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
