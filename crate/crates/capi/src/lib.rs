//! C ABI for embedding the solver: opaque handles, integer status codes,
//! and a thread-local last-error message. The header is generated by
//! cbindgen at build time into `include/rdmini.h`.
//!
//! Usage pattern from C:
//!
//! ```c
//! RdminiProblem *p = NULL;
//! if (rdmini_problem_from_toml("[problem]\nnsteps = 2\n", &p) != RDMINI_OK) { ... }
//! RdminiReport *r = NULL;
//! if (rdmini_run(p, &r) == RDMINI_OK) {
//!     printf("%llu solves\n", rdmini_report_solve_count(r));
//! }
//! rdmini_report_free(r);
//! rdmini_problem_free(p);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rdmini::bench;
use rdmini::cli::render_run_report;
use rdmini::config::RunConfig;
use rdmini::grid::decompose;
use rdmini::pulse::{self, field_checksum, RunReport};
use rdmini::solver::Outcome;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdminiStatus {
    RdminiOk = 0,
    /// A required pointer argument was null.
    RdminiNullPointer = 1,
    /// A string argument was not valid UTF-8.
    RdminiBadString = 2,
    /// Config parse or validation failure; see rdmini_last_error().
    RdminiConfigError = 3,
    /// The run could not execute (worker cap, invalid topology, ...).
    RdminiRunError = 4,
    /// Filesystem failure while writing an output.
    RdminiIoError = 5,
    /// A panic was caught at the FFI boundary.
    RdminiInternalError = 6,
}

use RdminiStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rdmini_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// A validated problem: configuration, workload, and tile topology.
pub struct RdminiProblem {
    cfg: RunConfig,
    problem: pulse::PulseProblem,
    nprx1: usize,
    nprx2: usize,
}

/// A finished run: per-solve statistics and the gathered final field.
pub struct RdminiReport {
    cfg: RunConfig,
    report: RunReport,
}

fn guard<F: FnOnce() -> RdminiStatus>(f: F) -> RdminiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            RdminiInternalError
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, RdminiStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(RdminiNullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        RdminiBadString
    })
}

fn build_problem(cfg: RunConfig, out: *mut *mut RdminiProblem) -> RdminiStatus {
    let problem = match cfg.to_problem() {
        Ok(p) => p,
        Err(e) => {
            set_error(&e.to_string());
            return RdminiConfigError;
        }
    };
    let (nprx1, nprx2) = cfg.topology_counts();
    if let Err(e) = decompose(&problem.grid, nprx1, nprx2) {
        set_error(&e.to_string());
        return RdminiConfigError;
    }
    let handle = Box::new(RdminiProblem { cfg, problem, nprx1, nprx2 });
    unsafe { *out = Box::into_raw(handle) };
    RdminiOk
}

/// Create a problem from a config file path (TOML sections as documented
/// for the CLI). On success `*out` owns the handle.
#[no_mangle]
pub unsafe extern "C" fn rdmini_problem_from_file(
    path: *const c_char,
    out: *mut *mut RdminiProblem,
) -> RdminiStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return RdminiNullPointer;
        }
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RunConfig::load(Path::new(path), &[]) {
            Ok(cfg) => build_problem(cfg, out),
            Err(e) => {
                set_error(&e.to_string());
                RdminiConfigError
            }
        }
    })
}

/// Create a problem from config text. An empty string selects the defaults
/// (the full 200 x 100 x 2 workload).
#[no_mangle]
pub unsafe extern "C" fn rdmini_problem_from_toml(
    text: *const c_char,
    out: *mut *mut RdminiProblem,
) -> RdminiStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return RdminiNullPointer;
        }
        let text = match cstr(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_str_with_overrides(text, &[]) {
            Ok(cfg) => build_problem(cfg, out),
            Err(e) => {
                set_error(&e.to_string());
                RdminiConfigError
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn rdmini_problem_free(p: *mut RdminiProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Execute the workload. On success `*out` owns a report handle; inspect
/// rdmini_report_all_converged() for the solve outcome.
#[no_mangle]
pub unsafe extern "C" fn rdmini_run(
    p: *const RdminiProblem,
    out: *mut *mut RdminiReport,
) -> RdminiStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            set_error("null pointer argument");
            return RdminiNullPointer;
        }
        let handle = &*p;
        let topo = match decompose(&handle.problem.grid, handle.nprx1, handle.nprx2) {
            Ok(t) => t,
            Err(e) => {
                set_error(&e.to_string());
                return RdminiConfigError;
            }
        };
        match pulse::run(&handle.problem, &topo) {
            Ok(report) => {
                let boxed = Box::new(RdminiReport { cfg: handle.cfg.clone(), report });
                *out = Box::into_raw(boxed);
                RdminiOk
            }
            Err(e) => {
                set_error(&e.to_string());
                RdminiRunError
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn rdmini_report_free(r: *mut RdminiReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

fn with_report<T: Default>(r: *const RdminiReport, f: impl FnOnce(&RunReport) -> T) -> T {
    if r.is_null() {
        return T::default();
    }
    f(unsafe { &(*r).report })
}

/// Number of linear solves executed (nsteps * solves_per_step when all converged).
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_solve_count(r: *const RdminiReport) -> u64 {
    with_report(r, |rep| rep.solve_stats.len() as u64)
}

/// Number of solves that reached the tolerance.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_converged_count(r: *const RdminiReport) -> u64 {
    with_report(r, |rep| {
        rep.solve_stats.iter().filter(|s| s.outcome == Outcome::Converged).count() as u64
    })
}

/// True when every solve converged.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_all_converged(r: *const RdminiReport) -> bool {
    with_report(r, |rep| rep.all_converged)
}

/// Total BiCGSTAB iterations across all solves.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_total_iterations(r: *const RdminiReport) -> u64 {
    with_report(r, |rep| rep.total_iterations() as u64)
}

/// Total global reduction events across all solves.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_total_reduction_events(r: *const RdminiReport) -> u64 {
    with_report(r, |rep| rep.total_reduction_events() as u64)
}

/// Total operator applications across all solves.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_total_matvecs(r: *const RdminiReport) -> u64 {
    with_report(r, |rep| rep.total_matvecs() as u64)
}

/// Wall-clock seconds of the run (monotonic clock).
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_wall_seconds(r: *const RdminiReport) -> f64 {
    with_report(r, |rep| rep.wall_seconds)
}

/// Zone sum of the initial field.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_initial_energy(r: *const RdminiReport) -> f64 {
    with_report(r, |rep| rep.initial_energy)
}

/// Zone sum of the final field.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_final_energy(r: *const RdminiReport) -> f64 {
    with_report(r, |rep| rep.final_energy)
}

/// FNV-1a checksum of the final field bytes; equal checksums mean
/// bit-identical results.
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_field_checksum(r: *const RdminiReport) -> u64 {
    with_report(r, |rep| field_checksum(&rep.final_field))
}

/// Write the structured text report (same format as the CLI).
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_write_text(
    r: *const RdminiReport,
    path: *const c_char,
) -> RdminiStatus {
    guard(|| {
        if r.is_null() {
            set_error("null report handle");
            return RdminiNullPointer;
        }
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let handle = &*r;
        let text = render_run_report(&handle.report, &handle.cfg);
        match std::fs::write(path, text) {
            Ok(()) => RdminiOk,
            Err(e) => {
                set_error(&e.to_string());
                RdminiIoError
            }
        }
    })
}

/// Write the final field in the flat binary snapshot layout
/// (u64-le header {nx1, nx2, nspecies}, then row-major f64-le values).
#[no_mangle]
pub unsafe extern "C" fn rdmini_report_write_field(
    r: *const RdminiReport,
    path: *const c_char,
) -> RdminiStatus {
    guard(|| {
        if r.is_null() {
            set_error("null report handle");
            return RdminiNullPointer;
        }
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match pulse::write_snapshot(Path::new(path), &(*r).report.final_field) {
            Ok(()) => RdminiOk,
            Err(e) => {
                set_error(&e.to_string());
                RdminiIoError
            }
        }
    })
}

/// Run the kernel benchmark described by `config_toml` (empty string for
/// defaults) and write the CSV to `path`.
#[no_mangle]
pub unsafe extern "C" fn rdmini_kernel_bench_to_csv(
    config_toml: *const c_char,
    path: *const c_char,
) -> RdminiStatus {
    guard(|| {
        let text = match cstr(config_toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let cfg = match RunConfig::from_str_with_overrides(text, &[]) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return RdminiConfigError;
            }
        };
        let report = match bench::run_kernel_bench(&cfg.to_bench()) {
            Ok(r) => r,
            Err(e) => {
                set_error(&e.to_string());
                return RdminiConfigError;
            }
        };
        let mut csv = format!("# config_hash: {:#018x}\n", cfg.hash());
        csv.push_str(&bench::bench_csv(&report));
        match std::fs::write(path, csv) {
            Ok(()) => RdminiOk,
            Err(e) => {
                set_error(&e.to_string());
                RdminiIoError
            }
        }
    })
}
