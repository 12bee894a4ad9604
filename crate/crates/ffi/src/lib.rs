//! C ABI over `fluidq`.
//!
//! Every entry point returns a [`FluidqStatus`]; on failure the message is
//! kept per thread and read back with [`fluidq_last_error`]. Handles are
//! opaque and released with the matching `_free` function. Matrices cross
//! the boundary as row-major `double` buffers whose capacity the caller
//! passes in; too small a buffer fails with `FLUIDQ_STATUS_BUFFER_TOO_SMALL`
//! and leaves it untouched.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fluidq::{
    censor, escape, partition_phases, riccati, stationary_distribution, CensoredGenerator, FluidError, FluidModel,
    Regime, RiccatiSolution, SolverOptions,
};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidqStatus {
    Ok = 0,
    /// Malformed model, bad argument or unreadable input.
    InvalidInput = 1,
    /// Solver failed to converge or hit a singular system.
    Numerical = 2,
    /// The operation is undefined for the model's drift regime.
    Regime = 3,
    NullPointer = 4,
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidqRegime {
    PositiveRecurrent = 0,
    NullRecurrent = 1,
    Transient = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidqAlgorithm {
    Newton = 0,
    Functional = 1,
}

/// Validated model, kept as its phase partition and censored generator.
pub struct FluidqModel {
    censored: CensoredGenerator,
}

/// Solved first-return system for one model.
pub struct FluidqSolution {
    censored: CensoredGenerator,
    solution: RiccatiSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FluidError) -> FluidqStatus {
    match e.exit_code() {
        1 => FluidqStatus::InvalidInput,
        3 => FluidqStatus::Regime,
        _ => FluidqStatus::Numerical,
    }
}

struct Failure(FluidqStatus, String);

impl From<FluidError> for Failure {
    fn from(e: FluidError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FluidqStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FluidqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FluidqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside fluidq".into());
            FluidqStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_matrix(a: &DMatrix<f64>, out: *mut f64, capacity: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    let need = a.nrows() * a.ncols();
    if capacity < need {
        return Err(Failure(FluidqStatus::BufferTooSmall, format!("buffer holds {capacity} values, {need} needed")));
    }
    let dst = std::slice::from_raw_parts_mut(out, need);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            dst[i * a.ncols() + j] = a[(i, j)];
        }
    }
    Ok(())
}

fn wrap_model(model: FluidModel) -> Result<Box<FluidqModel>, Failure> {
    let censored = censor(&model, &partition_phases(&model))?;
    Ok(Box::new(FluidqModel { censored }))
}

/// Thread-local message for the last failed call, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fluidq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a model from a row-major `m×m` generator and `m` rates.
///
/// # Safety
/// `generator` must point to `m*m` doubles, `rates` to `m` doubles and
/// `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fluidq_model_new(
    generator: *const f64,
    rates: *const f64,
    m: usize,
    out: *mut *mut FluidqModel,
) -> FluidqStatus {
    guard(|| {
        if generator.is_null() || rates.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let q = DMatrix::from_row_slice(m, m, std::slice::from_raw_parts(generator, m * m));
        let c = DVector::from_column_slice(std::slice::from_raw_parts(rates, m));
        let model = FluidModel::new(q, c, None)?;
        *out = Box::into_raw(wrap_model(model)?);
        Ok(())
    })
}

/// Builds a model from a JSON model document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fluidq_model_from_json(json: *const c_char, out: *mut *mut FluidqModel) -> FluidqStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(FluidqStatus::InvalidInput, format!("model document is not UTF-8: {e}")))?;
        *out = Box::into_raw(wrap_model(FluidModel::from_json_str(text)?)?);
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `fluidq_model_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn fluidq_model_free(model: *mut FluidqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Phase counts: total, up, down and zero-rate. Any output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fluidq_model_dims(
    model: *const FluidqModel,
    m: *mut usize,
    m_up: *mut usize,
    m_down: *mut usize,
    m_zero: *mut usize,
) -> FluidqStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let cg = &h.censored;
        for (p, v) in [(m, cg.dim()), (m_up, cg.m_up()), (m_down, cg.m_down()), (m_zero, cg.m_zero())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Mean drift and its regime.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fluidq_model_drift(
    model: *const FluidqModel,
    drift: *mut f64,
    regime: *mut FluidqRegime,
) -> FluidqStatus {
    guard(|| {
        let h = deref(model, "model")?;
        if !drift.is_null() {
            *drift = h.censored.drift();
        }
        if !regime.is_null() {
            *regime = match fluidq::classify(&h.censored) {
                Regime::PositiveRecurrent => FluidqRegime::PositiveRecurrent,
                Regime::NullRecurrent => FluidqRegime::NullRecurrent,
                Regime::Transient => FluidqRegime::Transient,
            };
        }
        Ok(())
    })
}

/// Solves for the first-return matrices. `tol <= 0` and `max_iter == 0`
/// select the defaults.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fluidq_solve(
    model: *const FluidqModel,
    algorithm: FluidqAlgorithm,
    tol: f64,
    max_iter: usize,
    out: *mut *mut FluidqSolution,
) -> FluidqStatus {
    guard(|| {
        let h = deref(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut options = SolverOptions::new(match algorithm {
            FluidqAlgorithm::Newton => riccati::Algorithm::Newton,
            FluidqAlgorithm::Functional => riccati::Algorithm::Functional,
        });
        if tol > 0.0 {
            options = options.with_tol(tol);
        }
        if max_iter > 0 {
            options = options.with_max_iter(max_iter);
        }
        let solution = fluidq::solve(&h.censored, &options)?;
        *out = Box::into_raw(Box::new(FluidqSolution { censored: h.censored.clone(), solution }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from `fluidq_solve` or be null.
#[no_mangle]
pub unsafe extern "C" fn fluidq_solution_free(solution: *mut FluidqSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Iteration counts for the primal and dual problems and the larger residual.
///
/// # Safety
/// `solution` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fluidq_solution_stats(
    solution: *const FluidqSolution,
    iterations: *mut usize,
    dual_iterations: *mut usize,
    residual: *mut f64,
) -> FluidqStatus {
    guard(|| {
        let s = &deref(solution, "solution")?.solution;
        if !iterations.is_null() {
            *iterations = s.iterations;
        }
        if !dual_iterations.is_null() {
            *dual_iterations = s.dual_iterations;
        }
        if !residual.is_null() {
            *residual = s.residual.max(s.dual_residual);
        }
        Ok(())
    })
}

/// Writes the up-by-down first-return matrix (`m_up*m_down` values).
///
/// # Safety
/// `solution` must be a live handle and `out` hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fluidq_solution_psi(
    solution: *const FluidqSolution,
    out: *mut f64,
    capacity: usize,
) -> FluidqStatus {
    guard(|| write_matrix(&deref(solution, "solution")?.solution.psi, out, capacity))
}

/// Writes the down-by-up first-return matrix of the reflected level.
///
/// # Safety
/// `solution` must be a live handle and `out` hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fluidq_solution_psi_hat(
    solution: *const FluidqSolution,
    out: *mut f64,
    capacity: usize,
) -> FluidqStatus {
    guard(|| write_matrix(&deref(solution, "solution")?.solution.psi_hat, out, capacity))
}

/// Stationary `P[Y <= x, phase = i]` for all `m` phases in model order.
///
/// # Safety
/// `solution` must be a live handle and `out` hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fluidq_stationary_cdf(
    solution: *const FluidqSolution,
    x: f64,
    out: *mut f64,
    capacity: usize,
) -> FluidqStatus {
    guard(|| {
        let h = deref(solution, "solution")?;
        let g = stationary_distribution(&h.censored, &h.solution)?.cdf(x)?;
        write_matrix(&DMatrix::from_column_slice(1, g.len(), g.as_slice()), out, capacity)
    })
}

/// Exit-phase probabilities from `(-a, b)`: `m` rows in model order, first
/// the `m_up` upper-exit columns then the `m_down` lower-exit columns.
///
/// # Safety
/// `solution` must be a live handle and `out` hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fluidq_escape(
    solution: *const FluidqSolution,
    a: f64,
    b: f64,
    out: *mut f64,
    capacity: usize,
) -> FluidqStatus {
    guard(|| {
        let h = deref(solution, "solution")?;
        let e = escape(&h.censored, &h.solution, a, b)?;
        write_matrix(&e.combined(), out, capacity)
    })
}
