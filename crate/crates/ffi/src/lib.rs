//! C ABI over the `lightsbb` core.
//!
//! Every function returns an [`SbbStatus`]. On failure the message is kept in
//! a thread-local buffer readable through [`sbb_last_error`]. Potentials and
//! models are opaque heap handles released with their `_free` function.
//! Arrays are row-major `f64` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lightsbb::rng::{self, streams};
use lightsbb::{eval, sampler, trainer, Error, GmmPotential, SampleBatch, SbbConfig};

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SbbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Parse = 6,
    Diverged = 7,
    Panic = 8,
}

/// Opaque Gaussian-mixture potential.
pub struct SbbPotential(GmmPotential);

/// Opaque trained model.
pub struct SbbModel(lightsbb::SbbModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SbbStatus {
    match e {
        Error::DimensionMismatch { .. } => SbbStatus::DimensionMismatch,
        Error::NonFinite(_) | Error::NonFiniteState { .. } => SbbStatus::NonFinite,
        Error::Diverged { .. } | Error::SinkhornDiverged { .. } => SbbStatus::Diverged,
        Error::Io { .. } | Error::MissingArtifact(_) => SbbStatus::Io,
        Error::Json(_) | Error::Csv(_) | Error::Config(_) => SbbStatus::Parse,
        _ => SbbStatus::InvalidArgument,
    }
}

struct Fail(SbbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SbbStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SbbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SbbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            SbbStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SbbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<(), Fail> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got }.into())
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sbb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sbb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a potential from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_from_json(json: *const c_char, out: *mut *mut SbbPotential) -> SbbStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let p: GmmPotential = serde_json::from_str(text).map_err(Error::from)?;
        write_out(out, SbbPotential(p), "out")
    })
}

/// Serializes a potential to JSON. Call with `buf = NULL` to query the size;
/// `*len` receives the byte count including the terminating NUL.
///
/// # Safety
/// `p` must come from this library; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_to_json(
    p: *const SbbPotential,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> SbbStatus {
    guard(|| {
        let p = handle(p, "potential")?;
        let text = serde_json::to_string(&p.0).map_err(Error::from)?;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = text.len() + 1;
        if buf.is_null() {
            return Ok(());
        }
        if cap < text.len() + 1 {
            return Err(Fail(
                SbbStatus::InvalidArgument,
                format!("buffer of {cap} bytes is too small for {}", text.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_free(p: *mut SbbPotential) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Data dimension, or 0 for a null handle.
///
/// # Safety
/// `p` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_dim(p: *const SbbPotential) -> usize {
    p.as_ref().map_or(0, |p| p.0.dim())
}

/// Number of mixture components, or 0 for a null handle.
///
/// # Safety
/// `p` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_components(p: *const SbbPotential) -> usize {
    p.as_ref().map_or(0, |p| p.0.components())
}

/// Drift `s(t, y)` into `out[dim]`; requires `0 ≤ t < T`.
///
/// # Safety
/// `y` and `out` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_drift(
    p: *const SbbPotential,
    t: f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> SbbStatus {
    guard(|| {
        let p = handle(p, "potential")?;
        check_dim(p.0.dim(), dim)?;
        let s = p.0.drift(t, slice_arg(y, dim, "y")?)?;
        out_slice(out, dim, "out")?.copy_from_slice(&s);
        Ok(())
    })
}

/// `log h_t(y)` up to a `y`-independent constant.
///
/// # Safety
/// `y` must hold `dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_log_h(
    p: *const SbbPotential,
    t: f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> SbbStatus {
    guard(|| {
        let p = handle(p, "potential")?;
        check_dim(p.0.dim(), dim)?;
        let v = p.0.log_h(t, slice_arg(y, dim, "y")?)?;
        *out_slice(out, 1, "out")?.first_mut().expect("length 1") = v;
        Ok(())
    })
}

/// One draw from the conditional coupling given `x0`.
///
/// # Safety
/// `x0` and `out` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn sbb_potential_sample_conditional(
    p: *const SbbPotential,
    x0: *const f64,
    dim: usize,
    seed: u64,
    out: *mut f64,
) -> SbbStatus {
    guard(|| {
        let p = handle(p, "potential")?;
        check_dim(p.0.dim(), dim)?;
        let y = p.0.sample_conditional(slice_arg(x0, dim, "x0")?, seed)?;
        out_slice(out, dim, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Loads a model saved by the trainer or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbb_model_load(path: *const c_char, out: *mut *mut SbbModel) -> SbbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = lightsbb::SbbModel::load(Path::new(path))?;
        write_out(out, SbbModel(m), "out")
    })
}

/// # Safety
/// `m` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sbb_model_save(m: *const SbbModel, path: *const c_char) -> SbbStatus {
    guard(|| {
        let m = handle(m, "model")?;
        m.0.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sbb_model_free(m: *mut SbbModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Data dimension, or 0 for a null handle.
///
/// # Safety
/// `m` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sbb_model_dim(m: *const SbbModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.dim())
}

/// Copy of the model's potential as a new handle.
///
/// # Safety
/// `m` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn sbb_model_potential(m: *const SbbModel, out: *mut *mut SbbPotential) -> SbbStatus {
    guard(|| {
        let m = handle(m, "model")?;
        write_out(out, SbbPotential(m.0.potential.clone()), "out")
    })
}

/// Maps `n` source points to target samples without simulating the SDE.
///
/// # Safety
/// `x0` and `out` must hold `n * dim` values.
#[no_mangle]
pub unsafe extern "C" fn sbb_model_infer(
    m: *const SbbModel,
    x0: *const f64,
    n: usize,
    dim: usize,
    seed: u64,
    out: *mut f64,
) -> SbbStatus {
    guard(|| {
        let m = handle(m, "model")?;
        check_dim(m.0.dim(), dim)?;
        let batch = SampleBatch::new(dim, slice_arg(x0, n * dim, "x0")?.to_vec())?;
        let y = sampler::infer(&m.0, &batch, &mut rng::stream(seed, streams::INFERENCE))?;
        out_slice(out, n * dim, "out")?.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Trains a model. `config_json` holds the trainer settings (at least
/// `beta` and `epsilon`; β = ∞ is `"inf"` or `null`).
///
/// # Safety
/// `source` must hold `n_source * dim` values, `target` `n_target * dim`
/// values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sbb_train(
    config_json: *const c_char,
    source: *const f64,
    n_source: usize,
    target: *const f64,
    n_target: usize,
    dim: usize,
    out: *mut *mut SbbModel,
) -> SbbStatus {
    guard(|| {
        let cfg: SbbConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let src = SampleBatch::new(dim, slice_arg(source, n_source * dim, "source")?.to_vec())?;
        let tgt = SampleBatch::new(dim, slice_arg(target, n_target * dim, "target")?.to_vec())?;
        let (model, _) = trainer::train_with(&cfg, &src, &tgt, &mut |_| Ok(()))?;
        write_out(out, SbbModel(model), "out")
    })
}

/// Exact empirical W₂ between two sets of `n` points.
///
/// # Safety
/// `a` and `b` must hold `n * dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sbb_w2_exact(a: *const f64, b: *const f64, n: usize, dim: usize, out: *mut f64) -> SbbStatus {
    guard(|| {
        let a = SampleBatch::new(dim, slice_arg(a, n * dim, "a")?.to_vec())?;
        let b = SampleBatch::new(dim, slice_arg(b, n * dim, "b")?.to_vec())?;
        let w = eval::w2_exact(&a, &b)?;
        *out_slice(out, 1, "out")?.first_mut().expect("length 1") = w.value;
        Ok(())
    })
}
