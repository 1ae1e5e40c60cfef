//! C ABI over `pwnn-core`.
//!
//! Problems and solutions are opaque heap handles released with their
//! `_free` function. Every fallible call returns a `PwnnStatus`; on a
//! nonzero status `pwnn_last_error_message` describes the failure for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pwnn_core::pwnn::{load_solution, save_solution};
use pwnn_core::{
    registry, rk4_solve, run_pwnn, Error, LayerSpec, OdeProblem, Partition, PiecewiseSolution, RunReport,
    TrainingConfig,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PwnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownProblem = 3,
    Divergence = 4,
    Domain = 5,
    Io = 6,
    Unavailable = 7,
    Panic = 8,
    Internal = 9,
}

/// Opaque problem handle.
pub struct PwnnProblem {
    inner: OdeProblem,
}

/// Opaque trained (or loaded) piecewise solution.
pub struct PwnnSolution {
    inner: PiecewiseSolution,
    report: Option<RunReport>,
}

/// Training options. Obtain defaults from `pwnn_options_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PwnnOptions {
    pub segments: usize,
    /// Hidden layer widths; `hidden_len` entries, at most 8 used.
    pub hidden: [usize; 8],
    pub hidden_len: usize,
    /// Learning rate per round; `learning_rates_len` entries, at most 8 used.
    pub learning_rates: [f64; 8],
    pub learning_rates_len: usize,
    pub max_iterations: usize,
    pub points: usize,
    pub rounds: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Nonzero maps each segment onto [-1, 1] before the first layer.
    pub normalize_input: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PwnnStatus {
    match e {
        Error::UnknownProblem { .. } => PwnnStatus::UnknownProblem,
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::Integration { .. } => PwnnStatus::Divergence,
        Error::Aborted { source, .. } => status_of(source),
        Error::Domain { .. } => PwnnStatus::Domain,
        Error::Io(_) | Error::Json(_) | Error::Snapshot { .. } => PwnnStatus::Io,
        _ => PwnnStatus::InvalidArgument,
    }
}

fn message_of(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (PwnnStatus, String)>) -> PwnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PwnnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside pwnn");
            PwnnStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (PwnnStatus, String) {
    (status_of(&e), message_of(&e))
}

fn null(what: &str) -> (PwnnStatus, String) {
    (PwnnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (PwnnStatus, String) {
    (PwnnStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PwnnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pwnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Looks up a built-in problem by name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pwnn_problem_from_name(name: *const c_char, out: *mut *mut PwnnProblem) -> PwnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let inner = registry::get(name).map_err(core_err)?;
        *out = Box::into_raw(Box::new(PwnnProblem { inner }));
        Ok(())
    })
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwnn_problem_dim(problem: *const PwnnProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.dim())
}

/// Right end of the interval, or NaN for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwnn_problem_t_end(problem: *const PwnnProblem) -> f64 {
    problem.as_ref().map_or(f64::NAN, |p| p.inner.t_end)
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pwnn_problem_free(problem: *mut PwnnProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// RK4 with step `h` evaluated at `n` points in `[0, T]`; writes `n * dim`
/// values row by row into `out`.
///
/// # Safety
/// `xs` must hold `n` values and `out` room for `n * dim`.
#[no_mangle]
pub unsafe extern "C" fn pwnn_rk4(
    problem: *const PwnnProblem,
    h: f64,
    xs: *const f64,
    n: usize,
    out: *mut f64,
) -> PwnnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        if n == 0 {
            return Ok(());
        }
        if xs.is_null() || out.is_null() {
            return Err(null("xs or out"));
        }
        let xs = std::slice::from_raw_parts(xs, n);
        let out = std::slice::from_raw_parts_mut(out, n * p.dim());
        let traj = rk4_solve(p, h, p.t_end).map_err(core_err)?;
        for (j, &x) in xs.iter().enumerate() {
            let y = traj.value_at(p, x).map_err(core_err)?;
            out[j * p.dim()..(j + 1) * p.dim()].copy_from_slice(&y);
        }
        Ok(())
    })
}

/// Library defaults: 1 segment, 20x20 tanh, lr 0.01, 10000 iterations,
/// 100 points, 1 round, seed 0, normalized input.
#[no_mangle]
pub extern "C" fn pwnn_options_default() -> PwnnOptions {
    let t = TrainingConfig::default();
    let mut hidden = [0; 8];
    hidden[..2].copy_from_slice(&[20, 20]);
    let mut learning_rates = [0.0; 8];
    learning_rates[0] = t.learning_rates[0];
    PwnnOptions {
        segments: 1,
        hidden,
        hidden_len: 2,
        learning_rates,
        learning_rates_len: 1,
        max_iterations: t.max_iterations,
        points: t.points,
        rounds: t.rounds,
        seed: t.seed,
        epsilon: t.epsilon,
        normalize_input: i32::from(t.normalize_input),
    }
}

fn build_run(p: &OdeProblem, o: &PwnnOptions) -> Result<(Partition, LayerSpec, TrainingConfig), (PwnnStatus, String)> {
    if o.hidden_len > 8 || o.learning_rates_len > 8 {
        return Err(invalid("hidden_len and learning_rates_len are limited to 8"));
    }
    let partition = Partition::equal(p.t_end, o.segments).map_err(core_err)?;
    let spec = LayerSpec::with_hidden(&o.hidden[..o.hidden_len], p.dim()).map_err(core_err)?;
    let config = TrainingConfig {
        learning_rates: o.learning_rates[..o.learning_rates_len].to_vec(),
        max_iterations: o.max_iterations,
        epsilon: o.epsilon,
        points: o.points,
        seed: o.seed,
        rounds: o.rounds,
        normalize_input: o.normalize_input != 0,
        ..TrainingConfig::default()
    };
    Ok((partition, spec, config))
}

/// Trains a piecewise solution. On divergence nothing is written to `out`.
///
/// # Safety
/// `problem` must be a live handle, `options` null (defaults) or valid,
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solve(
    problem: *const PwnnProblem,
    options: *const PwnnOptions,
    out: *mut *mut PwnnSolution,
) -> PwnnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = options.as_ref().copied().unwrap_or_else(|| pwnn_options_default());
        let (partition, spec, config) = build_run(p, &opts)?;
        let run = run_pwnn(p, &partition, &spec, &config).map_err(core_err)?;
        *out = Box::into_raw(Box::new(PwnnSolution {
            inner: run.solution,
            report: Some(run.report),
        }));
        Ok(())
    })
}

/// Loads a solution written by `pwnn_solution_save` or the CLI.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_load(dir: *const c_char, out: *mut *mut PwnnSolution) -> PwnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = str_arg(dir, "dir")?;
        let inner = load_solution(Path::new(dir)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(PwnnSolution { inner, report: None }));
        Ok(())
    })
}

/// # Safety
/// `solution` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_save(solution: *const PwnnSolution, dir: *const c_char) -> PwnnStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let dir = str_arg(dir, "dir")?;
        save_solution(Path::new(dir), &s.inner).map_err(core_err)
    })
}

/// Output dimension, or 0 for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_dim(solution: *const PwnnSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.inner.dim())
}

/// Segment count, or 0 for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_segments(solution: *const PwnnSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.inner.partition.segments())
}

/// Writes `dim` values of the piecewise solution at `x` into `out`.
///
/// # Safety
/// `solution` must be a live handle and `out` hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_evaluate(solution: *const PwnnSolution, x: f64, out: *mut f64) -> PwnnStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let y = s.inner.evaluate(x).map_err(core_err)?;
        std::slice::from_raw_parts_mut(out, y.len()).copy_from_slice(&y);
        Ok(())
    })
}

/// Final total loss of 1-based `segment` after 1-based `round`. Only
/// available for solutions produced by `pwnn_solve`.
///
/// # Safety
/// `solution` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_final_loss(
    solution: *const PwnnSolution,
    round: usize,
    segment: usize,
    out: *mut f64,
) -> PwnnStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = s
            .report
            .as_ref()
            .ok_or((PwnnStatus::Unavailable, "loaded solutions carry no training report".to_string()))?;
        let rec = report
            .record(round, segment)
            .ok_or_else(|| invalid(format!("no record for round {round}, segment {segment}")))?;
        *out = rec.final_loss.total;
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pwnn_solution_free(solution: *mut PwnnSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}
