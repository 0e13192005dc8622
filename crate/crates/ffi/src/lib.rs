//! C interface to the collinear orbit solver.
//!
//! Objects are opaque handles created by `cnb_*_new` or `cnb_solve` and
//! released with the matching `cnb_*_free`. Every fallible call returns a
//! [`CnbStatus`]; on failure, `cnb_last_error` copies a message for the
//! calling thread. Positions cross the boundary in original body labels,
//! row-major with one row per mesh node.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use collinear_nbody::cli::exit_code;
use collinear_nbody::integrator::{periodicity_check, CollisionMode, IntegratorOptions};
use collinear_nbody::minimizer::{minimize, MinimizerResult, OptimizerOptions};
use collinear_nbody::model::from_sorted_frame;
use collinear_nbody::solution::SolutionFile;
use collinear_nbody::verifier::{full_report, VerificationReport, VerifierOptions};
use collinear_nbody::{Error, Permutation, SystemSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnbStatus {
    Ok = 0,
    /// A checked property failed.
    VerificationFailed = 1,
    /// Invalid arguments or problem definition.
    InvalidInput = 2,
    NotConverged = 3,
    NonRegularizable = 4,
    NullPointer = 5,
    /// The output buffer is too small.
    BufferTooSmall = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnbCollisionMode {
    Regularized = 0,
    Bounce = 1,
}

/// Problem definition.
pub struct CnbSpec(SystemSpec);

/// Minimizer output together with its problem.
pub struct CnbSolution {
    spec: SystemSpec,
    options: OptimizerOptions,
    result: MinimizerResult,
}

/// Verification report.
pub struct CnbReport(VerificationReport);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

fn status_of(err: &Error) -> CnbStatus {
    match exit_code(err) {
        1 => CnbStatus::VerificationFailed,
        3 => CnbStatus::NotConverged,
        4 => CnbStatus::NonRegularizable,
        _ => CnbStatus::InvalidInput,
    }
}

fn fail(err: Error) -> CnbStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> CnbStatus) -> CnbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CnbStatus::Internal
        }
    }
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return CnbStatus::NullPointer;
        })+
    };
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(ptr, len)
    }
}

/// Copies `src` into `(buf, len)`; writes the required length to `needed`
/// when given.
unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, needed: *mut usize) -> CnbStatus {
    if !needed.is_null() {
        *needed = src.len();
    }
    if buf.is_null() || len < src.len() {
        set_error(format!("buffer holds {len} values, need {}", src.len()));
        return CnbStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    CnbStatus::Ok
}

/// Copies `text` NUL-terminated into `(buf, len)` and returns the number of
/// bytes needed including the terminator; truncates when `len` is short.
unsafe fn copy_str(text: &str, buf: *mut c_char, len: usize) -> usize {
    let bytes = text.as_bytes();
    if !buf.is_null() && len > 0 {
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    bytes.len() + 1
}

/// Copies the message of the last failed call on this thread into `buf`,
/// NUL-terminated and truncated to `len`. Returns the bytes needed
/// including the terminator.
#[no_mangle]
pub unsafe extern "C" fn cnb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_str(&e.borrow(), buf, len))
}

/// Creates a problem. `sigma` holds the one-based images `σ(1), ..., σ(n)`
/// or is null for the identity.
#[no_mangle]
pub unsafe extern "C" fn cnb_spec_new(
    n: usize,
    masses: *const f64,
    half_period: f64,
    sigma: *const usize,
    symmetric: bool,
    out: *mut *mut CnbSpec,
) -> CnbStatus {
    guard(|| {
        non_null!(masses, out);
        let masses = slice(masses, n).to_vec();
        let sigma = if sigma.is_null() {
            Permutation::identity(n)
        } else {
            match Permutation::from_one_based(slice(sigma, n)) {
                Ok(p) => p,
                Err(e) => return fail(e),
            }
        };
        let spec = SystemSpec {
            masses,
            half_period,
            sigma,
            symmetric_mode: symmetric,
        };
        match spec.validate() {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(CnbSpec(spec)));
                CnbStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cnb_spec_free(spec: *mut CnbSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Minimizes the action. `schedule` may be null (default meshes). A
/// solution is returned even when the minimizer did not converge; the
/// status is then `CNB_STATUS_NOT_CONVERGED`.
#[no_mangle]
pub unsafe extern "C" fn cnb_solve(
    spec: *const CnbSpec,
    schedule: *const usize,
    schedule_len: usize,
    seed: u64,
    out: *mut *mut CnbSolution,
) -> CnbStatus {
    guard(|| {
        non_null!(spec, out);
        let spec = &(*spec).0;
        let mut options = OptimizerOptions {
            seed,
            ..Default::default()
        };
        if !schedule.is_null() && schedule_len > 0 {
            options.mesh_schedule = slice(schedule, schedule_len).to_vec();
        }
        match minimize(spec, &options) {
            Ok(result) => {
                let converged = result.converged;
                *out = Box::into_raw(Box::new(CnbSolution {
                    spec: spec.clone(),
                    options,
                    result,
                }));
                if converged {
                    CnbStatus::Ok
                } else {
                    set_error("minimizer did not converge");
                    CnbStatus::NotConverged
                }
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cnb_solution_free(solution: *mut CnbSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Total action, converged flag, body count and cell count; any output
/// pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn cnb_solution_info(
    solution: *const CnbSolution,
    action: *mut f64,
    converged: *mut bool,
    n: *mut usize,
    cells: *mut usize,
) -> CnbStatus {
    guard(|| {
        non_null!(solution);
        let s = &*solution;
        if !action.is_null() {
            *action = s.result.action.total;
        }
        if !converged.is_null() {
            *converged = s.result.converged;
        }
        if !n.is_null() {
            *n = s.spec.n();
        }
        if !cells.is_null() {
            *cells = s.result.path.cells();
        }
        CnbStatus::Ok
    })
}

/// Mesh times, `cells + 1` values.
#[no_mangle]
pub unsafe extern "C" fn cnb_solution_times(
    solution: *const CnbSolution,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> CnbStatus {
    guard(|| {
        non_null!(solution);
        copy_out((*solution).result.path.times(), buf, len, needed)
    })
}

/// Node positions in original labels, `(cells + 1) * n` values.
#[no_mangle]
pub unsafe extern "C" fn cnb_solution_positions(
    solution: *const CnbSolution,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> CnbStatus {
    guard(|| {
        non_null!(solution);
        let s = &*solution;
        let path = &s.result.path;
        let rows: Vec<f64> = (0..=path.cells())
            .flat_map(|k| from_sorted_frame(path.node(k), &s.spec.sigma))
            .collect();
        copy_out(&rows, buf, len, needed)
    })
}

/// Writes the solution file (UTF-8 path).
#[no_mangle]
pub unsafe extern "C" fn cnb_solution_save(solution: *const CnbSolution, path: *const c_char) -> CnbStatus {
    guard(|| {
        non_null!(solution, path);
        let s = &*solution;
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            set_error("path is not UTF-8");
            return CnbStatus::InvalidInput;
        };
        let file = SolutionFile::new(&s.spec, &s.options, &IntegratorOptions::default(), &s.result);
        match file.save(Path::new(path)) {
            Ok(()) => CnbStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Integrates one period from `T/2` and writes the periodicity defect.
#[no_mangle]
pub unsafe extern "C" fn cnb_periodicity_defect(
    solution: *const CnbSolution,
    mode: CnbCollisionMode,
    defect: *mut f64,
) -> CnbStatus {
    guard(|| {
        non_null!(solution, defect);
        let s = &*solution;
        let opts = IntegratorOptions {
            collision_mode: match mode {
                CnbCollisionMode::Regularized => CollisionMode::Regularized,
                CnbCollisionMode::Bounce => CollisionMode::Bounce,
            },
            ..Default::default()
        };
        match periodicity_check(&s.result.path, &s.spec.sorted_masses(), &opts) {
            Ok(rep) => {
                *defect = rep.defect;
                CnbStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs every check with default tolerances. The report is returned in
/// `out` also when a check fails; the status is then `CNB_STATUS_VERIFICATION_FAILED`.
#[no_mangle]
pub unsafe extern "C" fn cnb_verify(solution: *const CnbSolution, out: *mut *mut CnbReport) -> CnbStatus {
    guard(|| {
        non_null!(solution, out);
        let s = &*solution;
        let report = full_report(&s.result.path, &s.spec, &VerifierOptions::default());
        let pass = report.pass;
        *out = Box::into_raw(Box::new(CnbReport(report)));
        if pass {
            CnbStatus::Ok
        } else {
            set_error("verification failed");
            CnbStatus::VerificationFailed
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cnb_report_free(report: *mut CnbReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of check records.
#[no_mangle]
pub unsafe extern "C" fn cnb_report_len(report: *const CnbReport) -> usize {
    if report.is_null() {
        0
    } else {
        let report = &*report;
        report.0.checks.len()
    }
}

/// Record `index`: pass flag, margin and tolerance; any output may be null.
#[no_mangle]
pub unsafe extern "C" fn cnb_report_check(
    report: *const CnbReport,
    index: usize,
    pass: *mut bool,
    margin: *mut f64,
    tolerance: *mut f64,
) -> CnbStatus {
    guard(|| {
        non_null!(report);
        let report = &*report;
        let Some(c) = report.0.checks.get(index) else {
            set_error(format!("no check at index {index}"));
            return CnbStatus::InvalidInput;
        };
        if !pass.is_null() {
            *pass = c.pass;
        }
        if !margin.is_null() {
            *margin = c.margin;
        }
        if !tolerance.is_null() {
            *tolerance = c.tolerance;
        }
        CnbStatus::Ok
    })
}

/// Name of record `index`; returns the bytes needed including the
/// terminator, or 0 for a bad index.
#[no_mangle]
pub unsafe extern "C" fn cnb_report_check_name(
    report: *const CnbReport,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> usize {
    if report.is_null() {
        return 0;
    }
    let report = &*report;
    match report.0.checks.get(index) {
        Some(c) => copy_str(&c.name, buf, len),
        None => 0,
    }
}
