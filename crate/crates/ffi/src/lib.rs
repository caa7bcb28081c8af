//! C interface to the bandit-control library.
//!
//! Every function returns a [`BcStatus`]. On failure the message is kept per
//! thread and can be copied out with [`bc_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bandit_control::harness::analysis::fit_slope;
use bandit_control::harness::config::ExperimentConfig;
use bandit_control::harness::experiment::{run_cell, run_experiment, CellSummary};
use bandit_control::numerics::project_spectral_ball;
use bandit_control::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Rejected = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Parsed experiment configuration.
pub struct BcConfig(ExperimentConfig);

/// One finished `(T, seed)` run with its comparator.
pub struct BcRun {
    cell: CellSummary,
    costs: Vec<f64>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BcRunSummary {
    pub horizon: usize,
    pub seed: u64,
    pub memory: usize,
    pub updates: usize,
    pub total_cost: f64,
    pub comparator_cost: f64,
    pub regret: f64,
    /// Number of violated invariants (0 for a clean run).
    pub violations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> BcStatus {
    match err {
        Error::Config(_) | Error::Toml(_) | Error::Unsupported(_) | Error::DegenerateHorizon(_) => {
            BcStatus::Config
        }
        Error::Rejected(_) => BcStatus::Rejected,
        Error::Numerical(_) | Error::NonFinite(_) => BcStatus::Numerical,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => BcStatus::Io,
        _ => BcStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), BcStatus>) -> BcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BcStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            BcStatus::Panic
        }
    }
}

fn lib<T>(r: bandit_control::Result<T>) -> Result<T, BcStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), BcStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        Err(BcStatus::NullPointer)
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, BcStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        BcStatus::InvalidArgument
    })
}

/// Copies the last error of this thread into `buf` (NUL-terminated) and
/// stores the full message length, without the terminator, in `needed`.
/// Returns `BufferTooSmall` when the message had to be truncated.
///
/// # Safety
/// `buf` must be writable for `len` bytes (or null with `len == 0`);
/// `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn bc_last_error_message(
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> BcStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    if !needed.is_null() {
        *needed = msg.len();
    }
    if len == 0 {
        return if msg.is_empty() {
            BcStatus::Ok
        } else {
            BcStatus::BufferTooSmall
        };
    }
    if buf.is_null() {
        return BcStatus::NullPointer;
    }
    let n = msg.len().min(len - 1);
    ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
    *buf.add(n) = 0;
    if n < msg.len() {
        BcStatus::BufferTooSmall
    } else {
        BcStatus::Ok
    }
}

/// Parses a TOML config; relative paths resolve against the working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_config_from_toml(
    text: *const c_char,
    out: *mut *mut BcConfig,
) -> BcStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = c_str(text, "text")?;
        let cfg = lib(ExperimentConfig::from_toml(text))?;
        *out = Box::into_raw(Box::new(BcConfig(cfg)));
        Ok(())
    })
}

/// Loads a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_config_load(path: *const c_char, out: *mut *mut BcConfig) -> BcStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = c_str(path, "path")?;
        let cfg = lib(ExperimentConfig::load(path))?;
        *out = Box::into_raw(Box::new(BcConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a config constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bc_config_free(cfg: *mut BcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one cell of the config (any horizon and seed) and computes its
/// comparator.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_run_new(
    cfg: *const BcConfig,
    horizon: usize,
    seed: u64,
    out: *mut *mut BcRun,
) -> BcStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let (cell, trace) = lib(run_cell(&(*cfg).0, horizon, seed, true))?;
        let costs = trace.rows.iter().map(|r| r.cost).collect();
        *out = Box::into_raw(Box::new(BcRun { cell, costs }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`bc_run_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bc_run_free(run: *mut BcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live run handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_run_summary(run: *const BcRun, out: *mut BcRunSummary) -> BcStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(out, "out")?;
        let c = &(*run).cell;
        *out = BcRunSummary {
            horizon: c.horizon,
            seed: c.seed,
            memory: c.memory,
            updates: c.schedule.count,
            total_cost: c.total_cost,
            comparator_cost: c.comparator_cost.unwrap_or(f64::NAN),
            regret: c.regret.unwrap_or(f64::NAN),
            violations: c.violations.len(),
        };
        Ok(())
    })
}

/// Copies the per-round costs into `out`, which must hold `len >= T` values.
///
/// # Safety
/// `run` must be a live run handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_run_costs(run: *const BcRun, out: *mut f64, len: usize) -> BcStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(out, "out")?;
        let costs = &(*run).costs;
        if len < costs.len() {
            set_error(format!("buffer holds {len} values, need {}", costs.len()));
            return Err(BcStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(costs.as_ptr(), out, costs.len());
        Ok(())
    })
}

/// Runs the full grid and writes the reports. `violations` receives the
/// number of violated invariants.
///
/// # Safety
/// `cfg` must be a live config handle; `violations` may be null.
#[no_mangle]
pub unsafe extern "C" fn bc_run_experiment(
    cfg: *const BcConfig,
    violations: *mut usize,
) -> BcStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        let summary = lib(run_experiment(&(*cfg).0))?;
        if !violations.is_null() {
            *violations = summary.violations;
        }
        Ok(())
    })
}

/// Log-log least-squares slope of `regret` against `horizon`.
///
/// # Safety
/// `horizon` and `regret` must be readable for `n` doubles; `slope` writable.
#[no_mangle]
pub unsafe extern "C" fn bc_fit_slope(
    horizon: *const f64,
    regret: *const f64,
    n: usize,
    slope: *mut f64,
) -> BcStatus {
    guard(|| {
        non_null(horizon, "horizon")?;
        non_null(regret, "regret")?;
        non_null(slope, "slope")?;
        let t = std::slice::from_raw_parts(horizon, n);
        let r = std::slice::from_raw_parts(regret, n);
        let pts: Vec<(f64, f64)> = t.iter().copied().zip(r.iter().copied()).collect();
        *slope = lib(fit_slope(&pts))?.slope;
        Ok(())
    })
}

/// Frobenius projection of a row-major `rows x cols` matrix onto the
/// spectral-norm ball of `radius`. `input` and `output` may alias.
///
/// # Safety
/// Both buffers must hold `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_project_spectral_ball(
    input: *const f64,
    rows: usize,
    cols: usize,
    radius: f64,
    output: *mut f64,
) -> BcStatus {
    guard(|| {
        non_null(input, "input")?;
        non_null(output, "output")?;
        let n = rows.checked_mul(cols).filter(|&n| n > 0).ok_or_else(|| {
            set_error("matrix must be non-empty");
            BcStatus::InvalidArgument
        })?;
        let m = DMatrix::from_row_slice(rows, cols, std::slice::from_raw_parts(input, n));
        let p = lib(project_spectral_ball(&m, radius))?;
        let flat: Vec<f64> = p.transpose().iter().copied().collect();
        ptr::copy_nonoverlapping(flat.as_ptr(), output, n);
        Ok(())
    })
}
