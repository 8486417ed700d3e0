//! C ABI for the dsqp solver.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`dsqp_solve` and
//! released with the matching `*_free`. Every fallible call returns a
//! `DsqpStatus`; on failure `dsqp_last_error_message` describes the error for
//! the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dsqp::driver::{baseline_sqp, run_dsqp, EtaSchedule, SolveResult, SolveStatus, SqpConfig};
use dsqp::model::PrimalDualPoint;
use dsqp::problems::{load_problem, BenchProblem, ProblemId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsqpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownProblem = 3,
    ConfigError = 4,
    SolveFailed = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsqpSchedule {
    Constant = 0,
    Geometric = 1,
    Residual = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsqpMethod {
    Decentralized = 0,
    Baseline = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsqpSolveStatus {
    Converged = 0,
    OuterLimit = 1,
    InnerStall = 2,
    EvaluationFailure = 3,
    LinearizationFailure = 4,
}

impl From<SolveStatus> for DsqpSolveStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => DsqpSolveStatus::Converged,
            SolveStatus::OuterLimit => DsqpSolveStatus::OuterLimit,
            SolveStatus::InnerStall => DsqpSolveStatus::InnerStall,
            SolveStatus::EvaluationFailure => DsqpSolveStatus::EvaluationFailure,
            SolveStatus::LinearizationFailure => DsqpSolveStatus::LinearizationFailure,
        }
    }
}

/// A library problem with its default start.
pub struct DsqpProblem {
    bench: BenchProblem,
}

pub struct DsqpConfig {
    config: SqpConfig,
    /// The problem's suggested penalty is used until a caller sets one.
    rho_set: bool,
}

pub struct DsqpResult {
    result: SolveResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(DsqpStatus, String);

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DsqpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DsqpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            DsqpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DsqpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the most recent failed call on this thread, or NULL. The
/// pointer stays valid until the next dsqp call on the same thread.
#[no_mangle]
pub extern "C" fn dsqp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a library problem ("P1", "P2", "net3" or "custom").
///
/// # Safety
/// `name` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsqp_problem_load(name: *const c_char, seed: u64, out: *mut *mut DsqpProblem) -> DsqpStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Failure(DsqpStatus::InvalidArgument, "name is not UTF-8".into()))?;
        let id: ProblemId = name.parse().map_err(|e: dsqp::problems::ProblemError| Failure(DsqpStatus::UnknownProblem, e.to_string()))?;
        let bench = load_problem(id, seed).map_err(|e| Failure(DsqpStatus::UnknownProblem, e.to_string()))?;
        *out = Box::into_raw(Box::new(DsqpProblem { bench }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from `dsqp_problem_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsqp_problem_free(problem: *mut DsqpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Total number of primal variables.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_problem_num_vars(problem: *const DsqpProblem, out: *mut usize) -> DsqpStatus {
    guard(|| {
        let p = deref(problem, "problem")?;
        *deref_mut(out, "out")? = p.bench.problem.n_vars_total();
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_problem_num_subsystems(problem: *const DsqpProblem, out: *mut usize) -> DsqpStatus {
    guard(|| {
        let p = deref(problem, "problem")?;
        *deref_mut(out, "out")? = p.bench.problem.n_subsystems();
        Ok(())
    })
}

/// Number of coupling rows.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_problem_num_coupling(problem: *const DsqpProblem, out: *mut usize) -> DsqpStatus {
    guard(|| {
        let p = deref(problem, "problem")?;
        *deref_mut(out, "out")? = p.bench.problem.n_coupling();
        Ok(())
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_new(out: *mut *mut DsqpConfig) -> DsqpStatus {
    guard(|| {
        *deref_mut(out, "out")? = Box::into_raw(Box::new(DsqpConfig {
            config: SqpConfig::default(),
            rho_set: false,
        }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from `dsqp_config_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_free(config: *mut DsqpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// `param` is the decay factor for `Geometric`, the scale for `Residual` and
/// ignored for `Constant`.
///
/// # Safety
/// `config` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_set_schedule(config: *mut DsqpConfig, kind: DsqpSchedule, param: f64) -> DsqpStatus {
    guard(|| {
        let c = deref_mut(config, "config")?;
        c.config.schedule = match kind {
            DsqpSchedule::Constant => EtaSchedule::Constant,
            DsqpSchedule::Geometric => EtaSchedule::Geometric { factor: param },
            DsqpSchedule::Residual => EtaSchedule::ResidualProportional { scale: param },
        };
        Ok(())
    })
}

/// # Safety
/// `config` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_set_eta0(config: *mut DsqpConfig, eta0: f64) -> DsqpStatus {
    guard(|| {
        deref_mut(config, "config")?.config.eta0 = eta0;
        Ok(())
    })
}

/// # Safety
/// `config` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_set_rho(config: *mut DsqpConfig, rho: f64) -> DsqpStatus {
    guard(|| {
        let c = deref_mut(config, "config")?;
        c.config.rho = rho;
        c.rho_set = true;
        Ok(())
    })
}

/// Outer tolerance on the KKT residual.
///
/// # Safety
/// `config` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_set_tolerance(config: *mut DsqpConfig, eps: f64) -> DsqpStatus {
    guard(|| {
        deref_mut(config, "config")?.config.eps = eps;
        Ok(())
    })
}

/// # Safety
/// `config` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_config_set_iteration_limits(config: *mut DsqpConfig, outer: usize, inner: usize) -> DsqpStatus {
    guard(|| {
        let c = deref_mut(config, "config")?;
        if outer == 0 || inner == 0 {
            return Err(Failure(DsqpStatus::InvalidArgument, "iteration limits must be positive".into()));
        }
        c.config.k_max = outer;
        c.config.l_max = inner;
        Ok(())
    })
}

/// Solves `problem` from its default start. `config` may be NULL for defaults.
/// A result is produced for every finished run, converged or not.
///
/// # Safety
/// Non-null pointers must be valid; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_solve(
    problem: *const DsqpProblem,
    config: *const DsqpConfig,
    method: DsqpMethod,
    out: *mut *mut DsqpResult,
) -> DsqpStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let p = deref(problem, "problem")?;
        let mut cfg = match config.as_ref() {
            Some(c) if c.rho_set => c.config.clone(),
            Some(c) => SqpConfig {
                rho: p.bench.rho,
                ..c.config.clone()
            },
            None => SqpConfig {
                rho: p.bench.rho,
                ..SqpConfig::default()
            },
        };
        cfg.validate().map_err(|e| Failure(DsqpStatus::ConfigError, e.to_string()))?;
        let p0: PrimalDualPoint = p.bench.start();
        let result = match method {
            DsqpMethod::Decentralized => run_dsqp(&p.bench.problem, &p0, &cfg),
            DsqpMethod::Baseline => {
                cfg.parallel = false;
                baseline_sqp(&p.bench.problem, &p0, cfg.eps, cfg.k_max, cfg.delta)
            }
        }
        .map_err(|e| Failure(DsqpStatus::SolveFailed, e.to_string()))?;
        *out = Box::into_raw(Box::new(DsqpResult { result }));
        Ok(())
    })
}

/// # Safety
/// `result` must come from `dsqp_solve` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsqp_result_free(result: *mut DsqpResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_result_status(result: *const DsqpResult, out: *mut DsqpSolveStatus) -> DsqpStatus {
    guard(|| {
        let r = deref(result, "result")?;
        *deref_mut(out, "out")? = r.result.status.into();
        Ok(())
    })
}

/// Outer and total inner iteration counts.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_result_iterations(result: *const DsqpResult, outer: *mut usize, inner: *mut usize) -> DsqpStatus {
    guard(|| {
        let r = deref(result, "result")?;
        *deref_mut(outer, "outer")? = r.result.outer_iterations();
        *deref_mut(inner, "inner")? = r.result.inner_iterations();
        Ok(())
    })
}

/// Final `‖F‖∞`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_result_residual(result: *const DsqpResult, out: *mut f64) -> DsqpStatus {
    guard(|| {
        let r = deref(result, "result")?;
        *deref_mut(out, "out")? = r.result.final_f_norm;
        Ok(())
    })
}

/// Total floats exchanged between neighbors.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsqp_result_floats_sent(result: *const DsqpResult, out: *mut usize) -> DsqpStatus {
    guard(|| {
        let r = deref(result, "result")?;
        *deref_mut(out, "out")? = r.result.comm.floats_sent_total;
        Ok(())
    })
}

/// Copies the stacked final primal point into `buf`. `needed` (optional)
/// receives the required length; `BufferTooSmall` is returned when `len` is
/// short, in which case nothing is written to `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles unless `len` is 0; other pointers valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn dsqp_result_primal(result: *const DsqpResult, buf: *mut f64, len: usize, needed: *mut usize) -> DsqpStatus {
    guard(|| {
        let r = deref(result, "result")?;
        let x = r.result.point.flat_primal();
        if let Some(n) = needed.as_mut() {
            *n = x.len();
        }
        if len < x.len() {
            return Err(Failure(
                DsqpStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", x.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(x.as_ptr(), buf, x.len());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, DsqpStatus::Panic);
        let msg = unsafe { CStr::from_ptr(dsqp_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("boom"));
    }

    #[test]
    fn success_clears_error() {
        set_error("stale");
        assert_eq!(guard(|| Ok(())), DsqpStatus::Ok);
        assert!(dsqp_last_error_message().is_null());
    }
}
