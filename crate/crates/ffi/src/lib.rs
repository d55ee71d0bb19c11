//! C ABI over the defeaturing engine.
//!
//! Objects are opaque handles created by `iso_problem_*` and `iso_defeature` and released with
//! the matching `*_free`. Every fallible call returns an [`IsoStatus`]; on failure the message is
//! available from [`iso_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary; they are reported as [`IsoStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use isodefeat::defeature::{run_defeaturing, IterationRecord, RunOutcome, Status};
use isodefeat::hierarchy::Side;
use isodefeat::problem::{run_reference, ProblemFile};
use isodefeat::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsoStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Text was not valid UTF-8, or an index or enum value was out of range.
    InvalidArgument = 2,
    /// Problem file or setting rejected.
    Config = 3,
    Io = 4,
    /// Newton, linear solver or fit failure.
    Numerical = 5,
    /// Parameterization could not be certified or the boundary fit self-intersects.
    Geometry = 6,
    /// Output buffer too small; the required length was written.
    BufferTooSmall = 7,
    Panic = 8,
}

/// Outcome of a defeaturing run.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsoRunStatus {
    Converged = 0,
    MaxIterations = 1,
}

/// Side of the parametric square; passed to the library as an `int32_t`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsoSide {
    South = 0,
    East = 1,
    North = 2,
    West = 3,
}

/// One row of the run record.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IsoIteration {
    pub n: usize,
    pub dofs: usize,
    pub boundary_dofs: usize,
    pub value: f64,
    pub estimator: f64,
    pub marked: usize,
    pub apos_rounds: usize,
    pub newton_steps: usize,
    /// Wall-clock seconds of the whole iteration.
    pub seconds: f64,
}

/// Reference value on the accurate boundary representation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IsoReference {
    pub value: f64,
    pub boundary_dofs: usize,
    pub analysis_dofs: usize,
}

/// Problem definition handle.
pub struct IsoProblem {
    file: ProblemFile,
}

/// Completed run handle.
pub struct IsoRun {
    outcome: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> IsoStatus {
    match e {
        Error::Config(_) | Error::KnotVector(_) | Error::Depth(..) | Error::WellPosedness(_) => IsoStatus::Config,
        Error::Io(_) => IsoStatus::Io,
        Error::Solver(_) | Error::Convergence { .. } => IsoStatus::Numerical,
        Error::Validity { .. } | Error::SelfIntersection { .. } | Error::Domain(..) | Error::Structure(_) => IsoStatus::Geometry,
    }
}

struct Failure(IsoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(code_of(&e), e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IsoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsoStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            IsoStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(IsoStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(IsoStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn problem_ref<'a>(p: *const IsoProblem) -> Result<&'a IsoProblem, Failure> {
    p.as_ref().ok_or_else(|| null("problem"))
}

unsafe fn problem_mut<'a>(p: *mut IsoProblem) -> Result<&'a mut IsoProblem, Failure> {
    p.as_mut().ok_or_else(|| null("problem"))
}

unsafe fn run_ref<'a>(p: *const IsoRun) -> Result<&'a IsoRun, Failure> {
    p.as_ref().ok_or_else(|| null("run"))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed_problem(file: ProblemFile) -> *mut IsoProblem {
    Box::into_raw(Box::new(IsoProblem { file }))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn iso_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iso_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in problem by name (`"flag"`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_preset(name: *const c_char, out: *mut *mut IsoProblem) -> IsoStatus {
    guard(|| {
        let name = text(name, "name")?;
        let file = match name {
            "flag" => ProblemFile::flag(),
            other => return Err(Failure(IsoStatus::InvalidArgument, format!("unknown preset {other:?}"))),
        };
        put(out, boxed_problem(file), "out")
    })
}

/// Parses a problem from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_parse(toml: *const c_char, out: *mut *mut IsoProblem) -> IsoStatus {
    guard(|| {
        let file = ProblemFile::parse(text(toml, "toml")?)?;
        put(out, boxed_problem(file), "out")
    })
}

/// Loads a problem file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_load(path: *const c_char, out: *mut *mut IsoProblem) -> IsoStatus {
    guard(|| {
        let file = ProblemFile::load(Path::new(text(path, "path")?))?;
        put(out, boxed_problem(file), "out")
    })
}

/// # Safety
/// `problem` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_free(problem: *mut IsoProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Overrides the run settings; NaN (or 0 for `max_iters`, a negative `state_depth`) keeps the
/// current value. `epsilon` may be `+∞` to stop after the first iteration.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_set_run(
    problem: *mut IsoProblem,
    alpha: f64,
    epsilon: f64,
    max_iters: usize,
    state_depth: i32,
) -> IsoStatus {
    guard(|| {
        let p = problem_mut(problem)?;
        let mut file = p.file.clone();
        if !alpha.is_nan() {
            file.run.alpha = alpha;
        }
        if !epsilon.is_nan() {
            file.run.epsilon = epsilon;
        }
        if max_iters > 0 {
            file.run.max_iters = max_iters;
        }
        if state_depth >= 0 {
            file.run.state.depth = state_depth as usize;
        }
        file.validate()?;
        p.file = file;
        Ok(())
    })
}

/// Boundary fit weights `κ0`, `κ1`.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_set_fit_weights(problem: *mut IsoProblem, kappa0: f64, kappa1: f64) -> IsoStatus {
    guard(|| {
        let p = problem_mut(problem)?;
        let mut file = p.file.clone();
        file.run.fit.kappa0 = kappa0;
        file.run.fit.kappa1 = kappa1;
        file.validate()?;
        p.file = file;
        Ok(())
    })
}

/// Writes the problem as TOML into `buf` (NUL-terminated). `len` receives the byte count
/// including the terminator; with a null or short buffer only `len` is written.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null; `len` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_problem_to_toml(problem: *const IsoProblem, buf: *mut c_char, cap: usize, len: *mut usize) -> IsoStatus {
    guard(|| {
        let s = problem_ref(problem)?.file.to_toml()?;
        let need = s.len() + 1;
        put(len, need, "len")?;
        if buf.is_null() || cap < need {
            return Err(Failure(IsoStatus::BufferTooSmall, format!("{need} bytes needed")));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
        *buf.add(s.len()) = 0;
        Ok(())
    })
}

/// Solves on the problem's reference boundary representation.
///
/// # Safety
/// `problem` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_reference(problem: *const IsoProblem, out: *mut IsoReference) -> IsoStatus {
    guard(|| {
        let r = run_reference(&problem_ref(problem)?.file)?;
        let value = IsoReference {
            value: r.value(),
            boundary_dofs: r.boundary_dofs(),
            analysis_dofs: r.solution.system.basis().dim(),
        };
        put(out, value, "out")
    })
}

/// Runs the defeaturing loop. On failure no handle is produced and the message names the
/// iteration reached.
///
/// # Safety
/// `problem` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_defeature(problem: *const IsoProblem, out: *mut *mut IsoRun) -> IsoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let f = &problem_ref(problem)?.file;
        let outcome = run_defeaturing(&f.geometry, &f.problem, &f.qoi, &f.run)
            .map_err(|(e, records)| Failure(code_of(&e), format!("{e} (after {} iterations)", records.len())))?;
        out.write(Box::into_raw(Box::new(IsoRun { outcome })));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn iso_run_free(run: *mut IsoRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_run_status(run: *const IsoRun, out: *mut IsoRunStatus) -> IsoStatus {
    guard(|| {
        let s = match run_ref(run)?.outcome.status {
            Status::Converged => IsoRunStatus::Converged,
            Status::MaxIterations => IsoRunStatus::MaxIterations,
        };
        put(out, s, "out")
    })
}

/// Number of iterations in the run record.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_run_iterations(run: *const IsoRun, out: *mut usize) -> IsoStatus {
    guard(|| put(out, run_ref(run)?.outcome.records.len(), "out"))
}

fn row(r: &IterationRecord) -> IsoIteration {
    IsoIteration {
        n: r.n,
        dofs: r.dofs,
        boundary_dofs: r.boundary_dofs,
        value: r.value,
        estimator: r.estimator,
        marked: r.marked,
        apos_rounds: r.apos_rounds,
        newton_steps: r.newton_steps,
        seconds: r.timings.total,
    }
}

/// Row `n` of the run record.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_run_iteration(run: *const IsoRun, n: usize, out: *mut IsoIteration) -> IsoStatus {
    guard(|| {
        let records = &run_ref(run)?.outcome.records;
        let r = records
            .get(n)
            .ok_or_else(|| Failure(IsoStatus::InvalidArgument, format!("iteration {n} out of range ({} recorded)", records.len())))?;
        put(out, row(r), "out")
    })
}

/// Control points of the final map as interleaved `x, y` pairs. `len` receives the number of
/// points; with a null buffer or `cap` (in points) too small only `len` is written.
///
/// # Safety
/// `xy` must be valid for `2 cap` doubles or null; `len` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn iso_run_control_points(run: *const IsoRun, xy: *mut f64, cap: usize, len: *mut usize) -> IsoStatus {
    guard(|| {
        let ctl = run_ref(run)?.outcome.map.control();
        put(len, ctl.len(), "len")?;
        if xy.is_null() || cap < ctl.len() {
            return Err(Failure(IsoStatus::BufferTooSmall, format!("{} points needed", ctl.len())));
        }
        for (k, c) in ctl.iter().enumerate() {
            *xy.add(2 * k) = c[0];
            *xy.add(2 * k + 1) = c[1];
        }
        Ok(())
    })
}

/// Point of the final boundary curve on `side` (an [`IsoSide`] value) at `t ∈ [0, 1]`.
///
/// # Safety
/// `run` must be a live handle; `x`, `y` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn iso_run_boundary_point(run: *const IsoRun, side: i32, t: f64, x: *mut f64, y: *mut f64) -> IsoStatus {
    guard(|| {
        let curve = &run_ref(run)?.outcome.curve;
        if !(0.0..=1.0).contains(&t) {
            return Err(Failure(IsoStatus::InvalidArgument, format!("t = {t} outside [0, 1]")));
        }
        let side = match side {
            s if s == IsoSide::South as i32 => Side::South,
            s if s == IsoSide::East as i32 => Side::East,
            s if s == IsoSide::North as i32 => Side::North,
            s if s == IsoSide::West as i32 => Side::West,
            other => return Err(Failure(IsoStatus::InvalidArgument, format!("no side {other}"))),
        };
        let (p, _) = curve.eval(side, t);
        put(x, p[0], "x")?;
        put(y, p[1], "y")
    })
}
