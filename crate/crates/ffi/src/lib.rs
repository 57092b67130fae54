//! C ABI for the trps-lab numerical laboratory.
//!
//! Conventions:
//! - every fallible call returns a [`TrpsLabStatus`]; results go through
//!   out-pointers;
//! - complex arrays are interleaved `re, im` pairs, row-major for matrices;
//! - handles are opaque and must be released with their `_free` function;
//! - `trps_lab_last_error` returns a thread-local message for the most
//!   recent failure.
//!
//! The C header is generated by cbindgen into `include/trps_lab.h` at build
//! time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use trps_lab::harness::{self, ExperimentConfig, Scenario};
use trps_lab::qdynamics::{
    evolve_analytic_vector, lifetime, HermitianOperator, IncrementLaw, PureState,
};
use trps_lab::sen::{lapse_of, magnetization, shift_of, SpaceSpinor};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrpsLabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Utf8Error = 3,
    RunFailed = 4,
    BufferTooSmall = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg).ok();
    });
}

fn fail(status: TrpsLabStatus, msg: impl Into<String>) -> TrpsLabStatus {
    set_error(msg);
    status
}

/// Message describing the most recent error on this thread, or null.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn trps_lab_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trps_lab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Lapse of the spinor `(a0, a1)`.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_lapse_of(
    a0_re: f64,
    a0_im: f64,
    a1_re: f64,
    a1_im: f64,
    out: *mut f64,
) -> TrpsLabStatus {
    if out.is_null() {
        return fail(TrpsLabStatus::NullPointer, "out is null");
    }
    let spinor = SpaceSpinor::new(Complex64::new(a0_re, a0_im), Complex64::new(a1_re, a1_im));
    match lapse_of(&spinor) {
        Ok(value) => {
            *out = value;
            TrpsLabStatus::Ok
        }
        Err(e) => fail(TrpsLabStatus::InvalidInput, e.to_string()),
    }
}

/// Shift 3-vector of the spinor `(a0, a1)` at speed `c`.
///
/// # Safety
/// `out` must point to a writable array of 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_shift_of(
    a0_re: f64,
    a0_im: f64,
    a1_re: f64,
    a1_im: f64,
    c: f64,
    out: *mut f64,
) -> TrpsLabStatus {
    if out.is_null() {
        return fail(TrpsLabStatus::NullPointer, "out is null");
    }
    let spinor = SpaceSpinor::new(Complex64::new(a0_re, a0_im), Complex64::new(a1_re, a1_im));
    match shift_of(&spinor, c) {
        Ok(v) => {
            std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&v);
            TrpsLabStatus::Ok
        }
        Err(e) => fail(TrpsLabStatus::InvalidInput, e.to_string()),
    }
}

/// Magnetization modulus (and unit direction, when nonzero) of `count`
/// spins with the given weights. `spins` holds `3 * count` doubles.
///
/// # Safety
/// `spins` and `weights` must be readable for `count` entries; `out_modulus`
/// and `out_direction` (3 doubles) must be writable.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_magnetization(
    spins: *const f64,
    weights: *const f64,
    count: usize,
    out_modulus: *mut f64,
    out_direction: *mut f64,
) -> TrpsLabStatus {
    if spins.is_null() || weights.is_null() || out_modulus.is_null() || out_direction.is_null() {
        return fail(TrpsLabStatus::NullPointer, "null argument");
    }
    let raw = std::slice::from_raw_parts(spins, 3 * count);
    let spin_vecs: Vec<[f64; 3]> = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let weight_slice = std::slice::from_raw_parts(weights, count);
    match magnetization(&spin_vecs, weight_slice) {
        Ok(m) => {
            *out_modulus = m.modulus;
            let dir = m.direction.unwrap_or([0.0, 0.0, 0.0]);
            std::slice::from_raw_parts_mut(out_direction, 3).copy_from_slice(&dir);
            TrpsLabStatus::Ok
        }
        Err(e) => fail(TrpsLabStatus::InvalidInput, e.to_string()),
    }
}

/// Coherence lifetime `2 hbar^2 / (sigma dE^2)`; returns `INFINITY` when
/// `sigma` or `delta_e` is zero.
#[no_mangle]
pub extern "C" fn trps_lab_coherence_lifetime(sigma: f64, delta_e: f64, hbar: f64) -> f64 {
    lifetime(sigma, delta_e, hbar)
}

/// Opaque evolution engine: a Hermitian operator with its cached spectrum.
pub struct TrpsLabEngine {
    op: HermitianOperator,
}

/// Builds an engine from a row-major `dim x dim` complex matrix given as
/// interleaved `re, im` pairs (`2 * dim * dim` doubles). The matrix must be
/// Hermitian within the library tolerance.
///
/// # Safety
/// `matrix_re_im` must be readable for `2 * dim * dim` doubles and
/// `out_engine` writable; the returned handle must be released with
/// [`trps_lab_engine_free`].
#[no_mangle]
pub unsafe extern "C" fn trps_lab_engine_new(
    matrix_re_im: *const f64,
    dim: usize,
    out_engine: *mut *mut TrpsLabEngine,
) -> TrpsLabStatus {
    if matrix_re_im.is_null() || out_engine.is_null() {
        return fail(TrpsLabStatus::NullPointer, "null argument");
    }
    if dim == 0 {
        return fail(TrpsLabStatus::InvalidInput, "dimension must be >= 1");
    }
    let raw = std::slice::from_raw_parts(matrix_re_im, 2 * dim * dim);
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            let k = 2 * (r * dim + c);
            m[(r, c)] = Complex64::new(raw[k], raw[k + 1]);
        }
    }
    let built = catch_unwind(AssertUnwindSafe(|| HermitianOperator::new(m)));
    match built {
        Ok(Ok(op)) => {
            *out_engine = Box::into_raw(Box::new(TrpsLabEngine { op }));
            TrpsLabStatus::Ok
        }
        Ok(Err(e)) => fail(TrpsLabStatus::InvalidInput, e.to_string()),
        Err(_) => fail(TrpsLabStatus::RunFailed, "panic during construction"),
    }
}

/// Releases an engine handle. Null is ignored.
///
/// # Safety
/// `engine` must be a handle from [`trps_lab_engine_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_engine_free(engine: *mut TrpsLabEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Dimension of the engine's operator; 0 for a null handle.
///
/// # Safety
/// `engine` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_engine_dim(engine: *const TrpsLabEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.op.dim())
}

/// Copies the ascending eigenvalues into `out` (`len >= dim` required).
///
/// # Safety
/// `engine` must be a live handle; `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_engine_eigenvalues(
    engine: *const TrpsLabEngine,
    out: *mut f64,
    len: usize,
) -> TrpsLabStatus {
    let Some(engine) = engine.as_ref() else {
        return fail(TrpsLabStatus::NullPointer, "engine is null");
    };
    if out.is_null() {
        return fail(TrpsLabStatus::NullPointer, "out is null");
    }
    let values = engine.op.eigenvalues();
    if len < values.len() {
        return fail(
            TrpsLabStatus::BufferTooSmall,
            format!("need {} slots, got {len}", values.len()),
        );
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
    TrpsLabStatus::Ok
}

/// Applies the ensemble-averaged propagator for elapsed time `t` with
/// time-uncertainty `sigma` to the state `psi_re_im` (interleaved, length
/// `2 * dim`), writing the averaged state into `out_re_im`.
///
/// # Safety
/// `engine` must be a live handle; `psi_re_im` readable and `out_re_im`
/// writable for `2 * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_engine_evolve_averaged(
    engine: *const TrpsLabEngine,
    psi_re_im: *const f64,
    t: f64,
    sigma: f64,
    hbar: f64,
    out_re_im: *mut f64,
) -> TrpsLabStatus {
    let Some(engine) = engine.as_ref() else {
        return fail(TrpsLabStatus::NullPointer, "engine is null");
    };
    if psi_re_im.is_null() || out_re_im.is_null() {
        return fail(TrpsLabStatus::NullPointer, "null state pointer");
    }
    if !(t >= 0.0) {
        return fail(TrpsLabStatus::InvalidInput, format!("t must be >= 0, got {t}"));
    }
    let dim = engine.op.dim();
    let raw = std::slice::from_raw_parts(psi_re_im, 2 * dim);
    let amps =
        DVector::from_iterator(dim, raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])));
    let psi = match PureState::new(amps) {
        Ok(psi) => psi,
        Err(e) => return fail(TrpsLabStatus::InvalidInput, e.to_string()),
    };
    // The averaged-vector map depends only on sigma and hbar; the per-step
    // mean is immaterial here.
    let law = match IncrementLaw::new(1.0, sigma, hbar) {
        Ok(law) => law,
        Err(e) => return fail(TrpsLabStatus::InvalidInput, e.to_string()),
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        evolve_analytic_vector(&psi, t, &engine.op, &law)
    }));
    match result {
        Ok(evolved) => {
            let out = std::slice::from_raw_parts_mut(out_re_im, 2 * dim);
            for (k, z) in evolved.iter().enumerate() {
                out[2 * k] = z.re;
                out[2 * k + 1] = z.im;
            }
            TrpsLabStatus::Ok
        }
        Err(_) => fail(TrpsLabStatus::RunFailed, "panic during evolution"),
    }
}

/// Decay factor of the averaged density element `(m, n)` after time `t`:
/// `exp(-sigma t (l_m - l_n)^2 / (2 hbar^2))`.
///
/// # Safety
/// `engine` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_engine_offdiag_decay(
    engine: *const TrpsLabEngine,
    m: usize,
    n: usize,
    t: f64,
    sigma: f64,
    hbar: f64,
    out: *mut f64,
) -> TrpsLabStatus {
    let Some(engine) = engine.as_ref() else {
        return fail(TrpsLabStatus::NullPointer, "engine is null");
    };
    if out.is_null() {
        return fail(TrpsLabStatus::NullPointer, "out is null");
    }
    let dim = engine.op.dim();
    if m >= dim || n >= dim {
        return fail(
            TrpsLabStatus::InvalidInput,
            format!("indices ({m}, {n}) out of range for dimension {dim}"),
        );
    }
    if !(sigma >= 0.0) || !(hbar > 0.0) || !(t >= 0.0) {
        return fail(TrpsLabStatus::InvalidInput, "need sigma >= 0, hbar > 0, t >= 0");
    }
    let w = engine.op.eigenvalues()[m] - engine.op.eigenvalues()[n];
    *out = (-sigma * t * w * w / (2.0 * hbar * hbar)).exp();
    TrpsLabStatus::Ok
}

/// SHA-256 hash of the canonicalized configuration text, written as a
/// NUL-terminated hex string (buffer of at least 65 bytes).
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `buf` writable for
/// `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_config_hash(
    config_text: *const c_char,
    buf: *mut c_char,
    buf_len: usize,
) -> TrpsLabStatus {
    if config_text.is_null() || buf.is_null() {
        return fail(TrpsLabStatus::NullPointer, "null argument");
    }
    let Ok(text) = CStr::from_ptr(config_text).to_str() else {
        return fail(TrpsLabStatus::Utf8Error, "config text is not UTF-8");
    };
    let hash = match harness::config_hash(text) {
        Ok(h) => h,
        Err(e) => return fail(TrpsLabStatus::InvalidInput, e.to_string()),
    };
    if buf_len < hash.len() + 1 {
        return fail(
            TrpsLabStatus::BufferTooSmall,
            format!("need {} bytes, got {buf_len}", hash.len() + 1),
        );
    }
    let out = std::slice::from_raw_parts_mut(buf as *mut u8, hash.len() + 1);
    out[..hash.len()].copy_from_slice(hash.as_bytes());
    out[hash.len()] = 0;
    TrpsLabStatus::Ok
}

/// Runs one scenario with the given configuration text, writing artifacts
/// under `out_dir`. `exit_code` receives the CLI-compatible code
/// (0 success, 1 usage error, 2 invariant violation).
///
/// # Safety
/// `scenario`, `config_text`, and `out_dir` must be NUL-terminated strings;
/// `exit_code` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trps_lab_run_scenario(
    scenario: *const c_char,
    config_text: *const c_char,
    out_dir: *const c_char,
    exit_code: *mut i32,
) -> TrpsLabStatus {
    if scenario.is_null() || config_text.is_null() || out_dir.is_null() || exit_code.is_null() {
        return fail(TrpsLabStatus::NullPointer, "null argument");
    }
    let parse = |ptr: *const c_char| CStr::from_ptr(ptr).to_str();
    let (Ok(scenario), Ok(text), Ok(dir)) = (parse(scenario), parse(config_text), parse(out_dir))
    else {
        return fail(TrpsLabStatus::Utf8Error, "argument is not UTF-8");
    };
    let scenario = match Scenario::from_str(scenario) {
        Ok(s) => s,
        Err(e) => {
            *exit_code = 1;
            return fail(TrpsLabStatus::InvalidInput, e);
        }
    };
    let cfg = match ExperimentConfig::from_text(text) {
        Ok(cfg) => cfg,
        Err(e) => {
            *exit_code = 1;
            return fail(TrpsLabStatus::InvalidInput, e.to_string());
        }
    };
    let code = catch_unwind(AssertUnwindSafe(|| {
        harness::execute(scenario, &cfg, Path::new(dir))
    }));
    match code {
        Ok(code) => {
            *exit_code = code;
            TrpsLabStatus::Ok
        }
        Err(_) => {
            *exit_code = 1;
            fail(TrpsLabStatus::RunFailed, "panic during scenario execution")
        }
    }
}
