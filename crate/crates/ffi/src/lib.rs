//! C interface to `homocont`.
//!
//! Every fallible function returns an [`HcStatus`]; on failure the message is
//! available from [`hc_last_error`] on the same thread. Handles are opaque and
//! must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use homocont::branchcont::{continue_branch, Branch, ContinuationSettings, Direction, OutcomeCode};
use homocont::homsolve::{newton_solve, residual, variational_system, NewtonSettings, ParametricModel};
use homocont::lindich::{fredholm_index, EdOptions};
use homocont::models::{self, ConfigFormat, Params};
use homocont::seqspace::{TruncatedSequence, Window};
use homocont::Error;

/// Status codes returned by all fallible functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownModel = 3,
    OutOfRange = 4,
    NonConvergence = 5,
    NonHyperbolic = 6,
    NoDichotomy = 7,
    Hypothesis = 8,
    Numerical = 9,
    Parse = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcConfigFormat {
    Json = 0,
    Toml = 1,
}

/// Final state of a continuation run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcOutcome {
    Reconnect = 0,
    Unbounded = 1,
    HitOmegaBoundary = 2,
    HitLambdaBoundary = 3,
    BudgetExhausted = 4,
}

/// A model `x_{t+1} = f_t(x_t, λ)` with its reference solution.
pub struct HcModel(ParametricModel);

/// A truncated homoclinic solution at a fixed parameter.
pub struct HcSolution {
    phi: TruncatedSequence,
    lambda: f64,
    residual: f64,
}

/// One continuation branch.
pub struct HcBranch(Branch);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> HcStatus {
    match err {
        Error::InvalidArgument(_) | Error::DomainViolation { .. } | Error::NoRealBranch(_) => HcStatus::InvalidArgument,
        Error::UnknownModel { .. } => HcStatus::UnknownModel,
        Error::ParameterOutOfRange { .. } => HcStatus::OutOfRange,
        Error::NonConvergence { .. } => HcStatus::NonConvergence,
        Error::NonHyperbolic => HcStatus::NonHyperbolic,
        Error::NoDichotomy { .. } | Error::NotFredholmCheckable { .. } => HcStatus::NoDichotomy,
        Error::Hypothesis(_) | Error::NoCertificate(_) => HcStatus::Hypothesis,
        Error::NumericalRank(_) => HcStatus::Numerical,
        Error::Parse(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => HcStatus::Parse,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HcStatus, String)>) -> HcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HcStatus::Panic
        }
    }
}

fn lift(err: Error) -> (HcStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (HcStatus, String) {
    (HcStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (HcStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; valid until the next call that fails.
#[no_mangle]
pub extern "C" fn hc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Built-in model with default parameters.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_model_builtin(name: *const c_char, out: *mut *mut HcModel) -> HcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = models::build(name, &Params::new()).map_err(lift)?;
        put(out, HcModel(m));
        Ok(())
    })
}

/// Model from a configuration document (`{"model": ..., parameters...}`).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_model_from_config(text: *const c_char, format: HcConfigFormat, out: *mut *mut HcModel) -> HcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let format = match format {
            HcConfigFormat::Json => ConfigFormat::Json,
            HcConfigFormat::Toml => ConfigFormat::Toml,
        };
        let (_, m) = models::from_config(text, format).map_err(lift)?;
        put(out, HcModel(m));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_model_free(model: *mut HcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `dim` and `lambda_star` may be null.
#[no_mangle]
pub unsafe extern "C" fn hc_model_info(model: *const HcModel, dim: *mut usize, lambda_star: *mut f64) -> HcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if !dim.is_null() {
            *dim = m.0.dim();
        }
        if !lambda_star.is_null() {
            *lambda_star = m.0.reference.lambda;
        }
        Ok(())
    })
}

/// Newton solve at `lambda` from the reference solution on at least `[-half_width, half_width]`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_solve(model: *const HcModel, lambda: f64, half_width: i64, out: *mut *mut HcSolution) -> HcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let w = Window::symmetric(half_width).map_err(lift)?.hull(&m.reference.phi.window());
        let (phi, _) = newton_solve(m, &m.reference.phi.on_window(w), lambda, &NewtonSettings::default()).map_err(lift)?;
        let res = residual(m, &phi, lambda).map_err(lift)?.sup_norm();
        put(out, HcSolution { phi, lambda, residual: res });
        Ok(())
    })
}

/// # Safety
/// `solution` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_solution_free(solution: *mut HcSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Window bounds, dimension, parameter and residual sup-norm; any output may be null.
///
/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_solution_info(
    solution: *const HcSolution,
    t_minus: *mut i64,
    t_plus: *mut i64,
    dim: *mut usize,
    lambda: *mut f64,
    residual: *mut f64,
) -> HcStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let w = s.phi.window();
        if !t_minus.is_null() {
            *t_minus = w.t_minus();
        }
        if !t_plus.is_null() {
            *t_plus = w.t_plus();
        }
        if !dim.is_null() {
            *dim = s.phi.dim();
        }
        if !lambda.is_null() {
            *lambda = s.lambda;
        }
        if !residual.is_null() {
            *residual = s.residual;
        }
        Ok(())
    })
}

/// Copies `φ_t` into `buf` (length `len >= dim`); zero outside the window.
///
/// # Safety
/// `solution` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hc_solution_value(solution: *const HcSolution, t: i64, buf: *mut f64, len: usize) -> HcStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let d = s.phi.dim();
        if len < d {
            return Err((HcStatus::InvalidArgument, format!("buffer holds {len} values, need {d}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, d);
        if s.phi.window().contains(t) {
            out.copy_from_slice(s.phi.at(t));
        } else {
            out.fill(0.0);
        }
        Ok(())
    })
}

/// Fredholm index of the linearization along the solution at `lambda`.
///
/// # Safety
/// `model` must be a live handle and `index` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_fredholm_index(model: *const HcModel, lambda: f64, half_width: i64, index: *mut i64) -> HcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if index.is_null() {
            return Err(null("index"));
        }
        let w = Window::symmetric(half_width).map_err(lift)?;
        let (phi, _) = newton_solve(m, &m.reference.phi.on_window(w.hull(&m.reference.phi.window())), lambda, &NewtonSettings::default())
            .map_err(lift)?;
        let sys = variational_system(m, &phi, lambda).map_err(lift)?;
        *index = fredholm_index(&sys, w, &EdOptions::default()).map_err(lift)?.index;
        Ok(())
    })
}

/// Continues the reference solution in direction `+1` or `-1` with `λ ∈ [lambda_min, lambda_max]`
/// and steplength `step` (default settings otherwise).
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_continue(
    model: *const HcModel,
    direction: c_int,
    lambda_min: f64,
    lambda_max: f64,
    step: f64,
    out: *mut *mut HcBranch,
) -> HcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = match direction {
            1 => Direction::Plus,
            -1 => Direction::Minus,
            _ => return Err((HcStatus::InvalidArgument, format!("direction must be +1 or -1, got {direction}"))),
        };
        let defaults = ContinuationSettings::default();
        let settings = ContinuationSettings {
            lambda_range: Some((lambda_min, lambda_max)),
            steplength: step,
            max_step: defaults.max_step.max(step),
            ..defaults
        };
        let branch = continue_branch(m, dir, &settings).map_err(lift)?;
        put(out, HcBranch(branch));
        Ok(())
    })
}

/// # Safety
/// `branch` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_branch_free(branch: *mut HcBranch) {
    if !branch.is_null() {
        drop(Box::from_raw(branch));
    }
}

/// Number of accepted points and the outcome; either output may be null.
///
/// # Safety
/// `branch` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_branch_info(branch: *const HcBranch, len: *mut usize, outcome: *mut HcOutcome, folds: *mut usize) -> HcStatus {
    guard(|| {
        let b = &branch.as_ref().ok_or_else(|| null("branch"))?.0;
        if !len.is_null() {
            *len = b.points.len();
        }
        if !outcome.is_null() {
            *outcome = match b.outcome.code {
                OutcomeCode::Reconnect => HcOutcome::Reconnect,
                OutcomeCode::Unbounded => HcOutcome::Unbounded,
                OutcomeCode::HitOmegaBoundary => HcOutcome::HitOmegaBoundary,
                OutcomeCode::HitLambdaBoundary => HcOutcome::HitLambdaBoundary,
                OutcomeCode::BudgetExhausted => HcOutcome::BudgetExhausted,
            };
        }
        if !folds.is_null() {
            *folds = b.outcome.folds.len();
        }
        Ok(())
    })
}

/// Parameter, sup-norm and arclength of point `i`; outputs may be null.
///
/// # Safety
/// `branch` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_branch_point(branch: *const HcBranch, i: usize, lambda: *mut f64, sup_norm: *mut f64, s: *mut f64) -> HcStatus {
    guard(|| {
        let b = &branch.as_ref().ok_or_else(|| null("branch"))?.0;
        let p = b.points.get(i).ok_or_else(|| (HcStatus::InvalidArgument, format!("point {i} of {}", b.points.len())))?;
        if !lambda.is_null() {
            *lambda = p.lambda;
        }
        if !sup_norm.is_null() {
            *sup_norm = p.sup_norm;
        }
        if !s.is_null() {
            *s = p.s;
        }
        Ok(())
    })
}

/// Solution at point `i` of a branch as a new handle; its residual reads as NaN.
///
/// # Safety
/// `branch` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_branch_solution(branch: *const HcBranch, i: usize, out: *mut *mut HcSolution) -> HcStatus {
    guard(|| {
        let b = &branch.as_ref().ok_or_else(|| null("branch"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = b.points.get(i).ok_or_else(|| (HcStatus::InvalidArgument, format!("point {i} of {}", b.points.len())))?;
        put(out, HcSolution { phi: p.phi.clone(), lambda: p.lambda, residual: f64::NAN });
        Ok(())
    })
}
