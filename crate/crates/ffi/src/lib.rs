//! C ABI over the `superexpressive` toolkit.
//!
//! Every fallible function returns an [`SeStatus`]; on failure the message is kept
//! per thread and read with [`se_last_error_message`]. Handles are opaque and must
//! be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use superexpressive::encoder::{build_full_1d, ApproxConfig};
use superexpressive::kst::{self, Provider};
use superexpressive::nntrain::{occlusion_map, window_starts, Model, Tensor};
use superexpressive::targets::Target;
use superexpressive::{Activation, ActivationSpec, Error, FloatEncoding, Network};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    DimensionMismatch = 4,
    SearchFailure = 5,
    DecompositionFailure = 6,
    Parse = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeActivation {
    Euaf = 0,
    Peuaf = 1,
    Rho1 = 2,
    Rho2 = 3,
    Rho3 = 4,
}

/// Opaque constructed network.
pub struct SeNetwork(Network);

/// Opaque trained classifier.
pub struct SeModel(Model);

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

fn status_of(e: &Error) -> SeStatus {
    match e {
        Error::Domain(_) | Error::WindowViolation { .. } | Error::DegenerateCurvature { .. } => SeStatus::Domain,
        Error::InvalidConfig(_) | Error::CoincidentAnchors(..) => SeStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => SeStatus::DimensionMismatch,
        Error::SearchFailure { .. } | Error::WitnessNotAchieved { .. } | Error::Diverged { .. } => {
            SeStatus::SearchFailure
        }
        Error::DecompositionFailure { .. } => SeStatus::DecompositionFailure,
        Error::Parse { .. } => SeStatus::Parse,
        Error::Io { .. } => SeStatus::Io,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (SeStatus, String)>) -> SeStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SeStatus::Panic
        }
    }
}

fn lib<T>(r: superexpressive::Result<T>) -> Result<T, (SeStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SeStatus, String) {
    (SeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (SeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (SeStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn activation(kind: SeActivation, w: f64) -> Activation {
    match kind {
        SeActivation::Euaf => Activation::Euaf,
        SeActivation::Peuaf => Activation::Peuaf { w },
        SeActivation::Rho1 => Activation::Rho1,
        SeActivation::Rho2 => Activation::Rho2,
        SeActivation::Rho3 => Activation::Rho3,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn se_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn se_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Evaluates an activation; `w` is used by PEUAF only.
///
/// # Safety
/// `out` must be a valid pointer to one `double`.
#[no_mangle]
pub unsafe extern "C" fn se_activation_eval(kind: SeActivation, w: f64, x: f64, out: *mut f64) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = activation(kind, w);
        *out = lib(ActivationSpec::new(a)).and_then(|s| lib(s.eval(x)))?;
        Ok(())
    })
}

/// Derivatives of an activation in `x` and, for PEUAF, in `w`.
///
/// # Safety
/// `dx` and `dw` must each be valid pointers to one `double`.
#[no_mangle]
pub unsafe extern "C" fn se_activation_derivs(
    kind: SeActivation,
    w: f64,
    x: f64,
    dx: *mut f64,
    dw: *mut f64,
) -> SeStatus {
    guard(|| {
        if dx.is_null() || dw.is_null() {
            return Err(null("derivative output"));
        }
        let spec = lib(ActivationSpec::new(activation(kind, w)))?;
        *dx = lib(spec.deriv_x(x))?;
        *dw = lib(spec.deriv_w(x))?;
        Ok(())
    })
}

/// Builds a fixed-size network for a registry target (or CSV table path) on
/// `[0, 1]^dim` within `eps`. On success `*out` receives a new handle.
///
/// # Safety
/// `target` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn se_network_approximate(
    kind: SeActivation,
    target: *const c_char,
    dim: usize,
    eps: f64,
    seed: u64,
    out: *mut *mut SeNetwork,
) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let target = lib(Target::resolve(c_str(target, "target")?))?;
        lib(target.check_dim(dim))?;
        let spec = lib(ActivationSpec::new(activation(kind, 1.0)))?;
        let cfg = ApproxConfig::new(eps).with_seed(seed);
        let net = if dim == 1 {
            lib(build_full_1d(&|x| target.eval_scalar(x), (0.0, 1.0), &spec, &cfg))?.network
        } else {
            let f = |x: &[f64]| target.eval(x);
            lib(kst::build_multivariate(&f, dim, (0.0, 1.0), &spec, &cfg, &Provider::default()))?.network
        };
        *out = Box::into_raw(Box::new(SeNetwork(net)));
        Ok(())
    })
}

/// Loads a network file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn se_network_load(path: *const c_char, out: *mut *mut SeNetwork) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let net = lib(Network::load(PathBuf::from(c_str(path, "path")?)))?;
        *out = Box::into_raw(Box::new(SeNetwork(net)));
        Ok(())
    })
}

/// Saves a network; `hex_floats` selects hexadecimal float literals.
///
/// # Safety
/// `net` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn se_network_save(net: *const SeNetwork, path: *const c_char, hex_floats: bool) -> SeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let enc = if hex_floats { FloatEncoding::Hex } else { FloatEncoding::Decimal };
        lib(net.0.save(PathBuf::from(c_str(path, "path")?), enc))
    })
}

/// Evaluates a scalar-output network at `x[0..n]`.
///
/// # Safety
/// `net` must be a live handle, `x` must hold `n` doubles and `out` one.
#[no_mangle]
pub unsafe extern "C" fn se_network_eval(net: *const SeNetwork, x: *const f64, n: usize, out: *mut f64) -> SeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let y = lib(net.0.forward(slice(x, n, "x")?))?;
        *out = y[0];
        Ok(())
    })
}

/// Width, depth and neuron count of a network.
///
/// # Safety
/// `net` must be a live handle; the outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn se_network_architecture(
    net: *const SeNetwork,
    width: *mut usize,
    depth: *mut usize,
    neurons: *mut usize,
) -> SeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if width.is_null() || depth.is_null() || neurons.is_null() {
            return Err(null("architecture output"));
        }
        let a = net.0.architecture();
        (*width, *depth, *neurons) = (a.width, a.depth, a.neurons);
        Ok(())
    })
}

/// Input dimension of a network, 0 for a null handle.
///
/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn se_network_input_dim(net: *const SeNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.input_dim())
}

/// # Safety
/// `net` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn se_network_free(net: *mut SeNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Loads a model JSON written by `superexp train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn se_model_load(path: *const c_char, out: *mut *mut SeModel) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = PathBuf::from(c_str(path, "path")?);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| (SeStatus::Io, format!("{}: {e}", path.display())))?;
        *out = Box::into_raw(Box::new(SeModel(lib(Model::from_json(&text))?)));
        Ok(())
    })
}

/// Signal length expected by the model, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn se_model_input_len(model: *const SeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_len())
}

/// Number of classes, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn se_model_classes(model: *const SeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.classes())
}

/// Class probabilities of one signal, written to `probs[0..classes]`.
///
/// # Safety
/// `signal` must hold `len` doubles and `probs` `classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn se_model_predict(
    model: *const SeModel,
    signal: *const f64,
    len: usize,
    probs: *mut f64,
    classes: usize,
) -> SeStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if probs.is_null() {
            return Err(null("probs"));
        }
        if classes < model.classes() {
            return Err((SeStatus::BufferTooSmall, format!("need room for {} classes", model.classes())));
        }
        let x = lib(Tensor::from_signals(&[slice(signal, len, "signal")?]))?;
        let p = lib(model.predict_proba(&x))?;
        ptr::copy_nonoverlapping(p[0].as_ptr(), probs, p[0].len());
        Ok(())
    })
}

/// Occlusion drops of one signal. `*written` receives the window count; when
/// `capacity` is too small nothing is copied and `BufferTooSmall` is returned.
///
/// # Safety
/// `signal` must hold `len` doubles, `drops` `capacity` doubles, `written` one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn se_model_occlusion(
    model: *const SeModel,
    signal: *const f64,
    len: usize,
    label: usize,
    window: usize,
    stride: usize,
    drops: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> SeStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if written.is_null() {
            return Err(null("written"));
        }
        let n = lib(window_starts(len, window, stride))?.len();
        *written = n;
        if capacity < n || drops.is_null() {
            return Err((SeStatus::BufferTooSmall, format!("need room for {n} windows")));
        }
        let d = lib(occlusion_map(model, slice(signal, len, "signal")?, label, window, stride))?;
        ptr::copy_nonoverlapping(d.as_ptr(), drops, d.len());
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn se_model_free(model: *mut SeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
