//! C ABI over `covsteer`.
//!
//! Objects are opaque handles created by `cs_scenario_from_json`, `cs_steer`,
//! `cs_stationary_solve` and released by the matching `*_free`. Every
//! fallible call returns a [`CsStatus`]; the message of the last failure on
//! the calling thread is available from [`cs_last_error_message`].
//! Matrices cross the boundary row-major in caller-owned buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use covsteer::document::{Diagnostics, IncentivePayload, Payload, SolutionDocument, StationaryPayload};
use covsteer::minimax::{self, MinimaxOptions};
use covsteer::model::scenario::{Scenario, ScenarioDocument};
use covsteer::model::{FiniteHorizonProblem, SolverOptions};
use covsteer::stationary::{self, StationarySolution};
use covsteer::steering::{self, IncentiveSolution};
use covsteer::{Error, StationaryProblem};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Validation = 4,
    NoConvergence = 5,
    Infeasible = 6,
    WrongKind = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Solver used by [`cs_steer`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsMethod {
    Shooting = 0,
    Minimax = 1,
}

/// A parsed, validated scenario.
pub struct CsScenario {
    document: ScenarioDocument,
    scenario: Scenario,
}

/// A finite-horizon incentive (terminal cost and Nash law).
pub struct CsIncentive {
    problem: FiniteHorizonProblem,
    options: SolverOptions,
    method: &'static str,
    solution: IncentiveSolution,
}

/// A stationary incentive (running state cost and gains).
pub struct CsStationary {
    problem: StationaryProblem,
    options: Option<SolverOptions>,
    solution: StationarySolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> CsStatus {
    match err {
        Error::Io(_) => CsStatus::Io,
        Error::Infeasible { .. } => CsStatus::Infeasible,
        Error::BlowUp { .. }
        | Error::RiccatiBlowUp { .. }
        | Error::SingularOperator
        | Error::NoConvergence { .. }
        | Error::SingularKkt { .. }
        | Error::NonFinitePath { .. }
        | Error::SaddleViolation { .. } => CsStatus::NoConvergence,
        _ => CsStatus::Validation,
    }
}

fn fail(status: CsStatus, msg: impl Into<String>) -> CsStatus {
    set_last_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), CsStatus>) -> CsStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(CsStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: covsteer::Result<T>) -> Result<T, CsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), CsStatus> {
    if p.is_null() {
        Err(fail(CsStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Copies `m` row-major into `out[0..len]`.
unsafe fn copy_matrix(m: &nalgebra::DMatrix<f64>, out: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        non_null(out, "out")?;
        let need = m.nrows() * m.ncols();
        if len < need {
            return Err(fail(
                CsStatus::BufferTooSmall,
                format!("buffer holds {len} values, {need} needed"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                dst[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next `cs_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by a `*_to_json` function.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a scenario document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_from_json(json: *const c_char, out: *mut *mut CsScenario) -> CsStatus {
    guard(|| {
        non_null(json, "json")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| fail(CsStatus::InvalidUtf8, e.to_string()))?;
        let document = lift(ScenarioDocument::from_json(text))?;
        let scenario = lift(document.scenario())?;
        match &scenario {
            Scenario::Finite(p) => {
                lift(p.prepared())?;
            }
            Scenario::Stationary(p) => {
                lift(p.prepared())?;
            }
        }
        *out = Box::into_raw(Box::new(CsScenario { document, scenario }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`cs_scenario_from_json`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_free(s: *mut CsScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// State dimension n, or 0 for NULL.
///
/// # Safety
/// `s` must be a live scenario handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_state_dim(s: *const CsScenario) -> usize {
    s.as_ref().map_or(0, |s| s.scenario.plant().n())
}

/// 1 for a stationary scenario, 0 for a finite-horizon one or NULL.
///
/// # Safety
/// `s` must be a live scenario handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_is_stationary(s: *const CsScenario) -> i32 {
    s.as_ref()
        .map_or(0, |s| matches!(s.scenario, Scenario::Stationary(_)) as i32)
}

/// Synthesizes the terminal cost of a finite-horizon scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_steer(
    scenario: *const CsScenario,
    method: CsMethod,
    out: *mut *mut CsIncentive,
) -> CsStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let s = &*scenario;
        let Scenario::Finite(problem) = &s.scenario else {
            return Err(fail(CsStatus::WrongKind, "scenario is stationary, expected a finite horizon"));
        };
        let problem = lift(problem.prepared())?;
        let options = s.document.options();
        let (solution, method) = match method {
            CsMethod::Shooting => (lift(steering::solve_steering(&problem, &options))?, "shooting"),
            CsMethod::Minimax => {
                let rep = lift(minimax::extragradient_solve(&problem, &MinimaxOptions::default()))?;
                (lift(steering::assemble(&problem, &rep.f_recovered, 0, false))?, "minimax")
            }
        };
        *out = Box::into_raw(Box::new(CsIncentive {
            problem,
            options,
            method,
            solution,
        }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`cs_steer`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_incentive_free(h: *mut CsIncentive) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// State dimension n of the terminal cost, or 0 for NULL.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_incentive_dim(h: *const CsIncentive) -> usize {
    h.as_ref().map_or(0, |h| h.solution.f.nrows())
}

/// Writes the n×n terminal cost F row-major into `out[0..len]`.
///
/// # Safety
/// `h` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_incentive_terminal_cost(h: *const CsIncentive, out: *mut f64, len: usize) -> CsStatus {
    match h.as_ref() {
        Some(h) => copy_matrix(&h.solution.f, out, len),
        None => fail(CsStatus::NullPointer, "handle is NULL"),
    }
}

/// Relative terminal covariance residual, NaN for NULL.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_incentive_terminal_residual(h: *const CsIncentive) -> f64 {
    h.as_ref().map_or(f64::NAN, |h| h.solution.terminal_residual)
}

/// Solution document as a newly allocated JSON string (free with
/// [`cs_string_free`]), or NULL on failure.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_incentive_to_json(h: *const CsIncentive) -> *mut c_char {
    let mut text = None;
    let status = guard(|| {
        non_null(h, "handle")?;
        let h = &*h;
        let doc = SolutionDocument::new(
            ScenarioDocument::from_finite(&h.problem, Some(h.options)),
            Payload::Incentive(IncentivePayload::from_solution(&h.solution, h.method)),
            Diagnostics::default(),
        );
        text = Some(lift(doc.to_json())?);
        Ok(())
    });
    match (status, text) {
        (CsStatus::Ok, Some(t)) => into_c_string(t),
        _ => ptr::null_mut(),
    }
}

/// Synthesizes the running state cost of a stationary scenario. A solve
/// whose regularization fails returns `NoConvergence` and no handle.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_solve(scenario: *const CsScenario, out: *mut *mut CsStationary) -> CsStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let s = &*scenario;
        let Scenario::Stationary(problem) = &s.scenario else {
            return Err(fail(CsStatus::WrongKind, "scenario has a finite horizon, expected stationary"));
        };
        let solution = lift(stationary::solve_stationary(problem))?;
        if solution.regularization_failed() {
            return Err(fail(
                CsStatus::NoConvergence,
                "no epsilon up to 1e-1 makes the closed loop Hurwitz",
            ));
        }
        *out = Box::into_raw(Box::new(CsStationary {
            problem: problem.clone(),
            options: s.document.solver,
            solution,
        }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`cs_stationary_solve`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_free(h: *mut CsStationary) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Writes the n×n state cost Q row-major into `out[0..len]`.
///
/// # Safety
/// `h` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_state_cost(h: *const CsStationary, out: *mut f64, len: usize) -> CsStatus {
    match h.as_ref() {
        Some(h) => copy_matrix(&h.solution.q_out, out, len),
        None => fail(CsStatus::NullPointer, "handle is NULL"),
    }
}

/// Writes the m×n player-1 gain row-major into `out[0..len]`.
///
/// # Safety
/// `h` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_gain1(h: *const CsStationary, out: *mut f64, len: usize) -> CsStatus {
    match h.as_ref() {
        Some(h) => copy_matrix(&h.solution.k1, out, len),
        None => fail(CsStatus::NullPointer, "handle is NULL"),
    }
}

/// Writes the p×n player-2 gain row-major into `out[0..len]`.
///
/// # Safety
/// `h` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_gain2(h: *const CsStationary, out: *mut f64, len: usize) -> CsStatus {
    match h.as_ref() {
        Some(h) => copy_matrix(&h.solution.k2, out, len),
        None => fail(CsStatus::NullPointer, "handle is NULL"),
    }
}

/// Hurwitz margin of the closed loop, NaN for NULL.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_hurwitz_margin(h: *const CsStationary) -> f64 {
    h.as_ref().map_or(f64::NAN, |h| h.solution.hurwitz_margin)
}

/// Regularization used (0 when none was needed), NaN for NULL.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_epsilon_used(h: *const CsStationary) -> f64 {
    h.as_ref().map_or(f64::NAN, |h| h.solution.epsilon_used)
}

/// Solution document as a newly allocated JSON string (free with
/// [`cs_string_free`]), or NULL on failure.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_stationary_to_json(h: *const CsStationary) -> *mut c_char {
    let mut text = None;
    let status = guard(|| {
        non_null(h, "handle")?;
        let h = &*h;
        let doc = SolutionDocument::new(
            ScenarioDocument::from_stationary(&h.problem, h.options),
            Payload::Stationary(StationaryPayload::from_solution(&h.solution)),
            Diagnostics::default(),
        );
        text = Some(lift(doc.to_json())?);
        Ok(())
    });
    match (status, text) {
        (CsStatus::Ok, Some(t)) => into_c_string(t),
        _ => ptr::null_mut(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = r#"{
        "plant": {"A": [[0.0]], "B1": [[1.4142135623730951]], "B2": [[1.0]], "C": [[1.0]]},
        "horizon": {"T": 1.0, "steps": 200},
        "Q": [[0.0]], "Sigma0": [[1.0]], "SigmaT": [[1.0]]
    }"#;

    fn scenario(text: &str) -> (CsStatus, *mut CsScenario) {
        let c = CString::new(text).unwrap();
        let mut s = ptr::null_mut();
        let st = unsafe { cs_scenario_from_json(c.as_ptr(), &mut s) };
        (st, s)
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Infeasible { lhs_rank: 3, rhs_rank: 2 }), CsStatus::Infeasible);
        assert_eq!(status_of(&Error::SingularOperator), CsStatus::NoConvergence);
        assert_eq!(status_of(&Error::Scenario("x".into())), CsStatus::Validation);
    }

    #[test]
    fn golden_round_trip() {
        let (st, s) = scenario(GOLDEN);
        assert_eq!(st, CsStatus::Ok);
        let mut h = ptr::null_mut();
        unsafe {
            assert_eq!(cs_steer(s, CsMethod::Shooting, &mut h), CsStatus::Ok);
            let mut f = [0.0];
            assert_eq!(cs_incentive_terminal_cost(h, f.as_mut_ptr(), 1), CsStatus::Ok);
            assert!((f[0] - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-6);
            assert!(cs_last_error_message().is_null());
            cs_incentive_free(h);
            cs_scenario_free(s);
        }
    }

    #[test]
    fn short_buffer_is_reported() {
        let (_, s) = scenario(GOLDEN);
        let mut h = ptr::null_mut();
        unsafe {
            cs_steer(s, CsMethod::Shooting, &mut h);
            assert_eq!(cs_incentive_terminal_cost(h, ptr::null_mut(), 0), CsStatus::NullPointer);
            let mut f = [0.0; 0];
            assert_eq!(cs_incentive_terminal_cost(h, f.as_mut_ptr(), 0), CsStatus::BufferTooSmall);
            cs_incentive_free(h);
            cs_scenario_free(s);
        }
    }
}
