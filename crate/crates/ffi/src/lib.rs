//! C ABI over sckd: opaque network handles, the correlation kernel and point
//! metrics. Every function returns an [`SckdStatus`]; on failure a message is
//! available from `sckd_last_error` until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::{ArrayView2, ArrayView5};
use sckd::datagen::{FEET, GRID_H, GRID_W};
use sckd::eval::{latency_bench_network, point_metrics};
use sckd::losses::{rbf_correlation_map, KernelMode};
use sckd::models::{build_network, load_checkpoint, save_checkpoint, EncoderKind, Network, NetworkSpec};
use sckd::nn::Module;
use sckd::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SckdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    MissingArtifact = 6,
    Config = 7,
    Runtime = 8,
    Panic = 9,
}

/// Opaque network handle.
pub struct SckdNetwork {
    inner: Network,
}

/// Encoder families accepted by `sckd_network_new`.
pub const SCKD_ENCODER_C3D: u32 = 0;
pub const SCKD_ENCODER_I3D: u32 = 1;
pub const SCKD_ENCODER_R2PLUS1D: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SckdStatus {
    match err {
        Error::Shape { .. } => SckdStatus::Shape,
        Error::InvalidArgument(_) | Error::UnknownSubject(_) => SckdStatus::InvalidArgument,
        Error::Config(_) => SckdStatus::Config,
        Error::MissingArtifact(_) => SckdStatus::MissingArtifact,
        Error::Format { .. } | Error::Json(_) => SckdStatus::Format,
        Error::Io { .. } | Error::RunDirNotEmpty(_) => SckdStatus::Io,
        Error::NonFinite { .. } => SckdStatus::Runtime,
    }
}

fn fail(status: SckdStatus, msg: impl Into<String>) -> SckdStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SckdStatus>) -> SckdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SckdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SckdStatus::Panic, "internal panic"),
    }
}

fn check(r: sckd::Result<()>) -> Result<(), SckdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn lift<T>(r: sckd::Result<T>) -> Result<T, SckdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, SckdStatus> {
    if path.is_null() {
        return Err(fail(SckdStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(SckdStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a>(net: *const SckdNetwork) -> Result<&'a Network, SckdStatus> {
    net.as_ref()
        .map(|n| &n.inner)
        .ok_or_else(|| fail(SckdStatus::NullPointer, "network handle is null"))
}

fn publish(net: Network, out: *mut *mut SckdNetwork) {
    let boxed = Box::new(SckdNetwork { inner: net });
    // SAFETY: callers have checked `out` for null.
    unsafe { *out = Box::into_raw(boxed) };
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn sckd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sckd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized network. `student` selects the compact
/// student (the encoder kind is then ignored); `width` scales encoder channels.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_new(
    encoder: u32,
    student: bool,
    window: usize,
    width: f64,
    seed: u64,
    out: *mut *mut SckdNetwork,
) -> SckdStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SckdStatus::NullPointer, "out is null"));
        }
        let kind = match encoder {
            SCKD_ENCODER_C3D => EncoderKind::C3d,
            SCKD_ENCODER_I3D => EncoderKind::I3d,
            SCKD_ENCODER_R2PLUS1D => EncoderKind::R2plus1d,
            k => return Err(fail(SckdStatus::InvalidArgument, format!("unknown encoder {k}"))),
        };
        let spec = if student {
            NetworkSpec::student(window)
        } else {
            NetworkSpec::teacher(kind, window)
        }
        .with_width(width);
        publish(lift(build_network(&spec, seed))?, out);
        Ok(())
    })
}

/// Loads a checkpoint written by the `sckd` tools.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_load(path: *const c_char, out: *mut *mut SckdNetwork) -> SckdStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SckdStatus::NullPointer, "out is null"));
        }
        let path = path_arg(path)?;
        let (net, _) = lift(load_checkpoint(&path))?;
        publish(net, out);
        Ok(())
    })
}

/// Writes the network as a checkpoint.
///
/// # Safety
/// `net` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_save(net: *const SckdNetwork, path: *const c_char) -> SckdStatus {
    guard(|| {
        let net = handle(net)?;
        let path = path_arg(path)?;
        check(save_checkpoint(net, 0, 0, &path))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_free(net: *mut SckdNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Window length (time steps) the network expects.
///
/// # Safety
/// `net` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_window(net: *const SckdNetwork, out: *mut usize) -> SckdStatus {
    guard(|| {
        let net = handle(net)?;
        let out = out.as_mut().ok_or_else(|| fail(SckdStatus::NullPointer, "out is null"))?;
        *out = net.spec.window;
        Ok(())
    })
}

/// Number of trainable scalars.
///
/// # Safety
/// `net` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_parameter_count(net: *const SckdNetwork, out: *mut usize) -> SckdStatus {
    guard(|| {
        let net = handle(net)?;
        let out = out.as_mut().ok_or_else(|| fail(SckdStatus::NullPointer, "out is null"))?;
        *out = net.parameter_count();
        Ok(())
    })
}

/// Predicts forces for `batch` clips. `input` holds `batch * 2 * window * 16 * 8`
/// floats (row-major `[b, foot, t, row, col]`); `output` receives
/// `batch * 2 * window` floats and `output_len` must equal that count.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_predict(
    net: *const SckdNetwork,
    input: *const f32,
    batch: usize,
    output: *mut f32,
    output_len: usize,
) -> SckdStatus {
    guard(|| {
        let net = handle(net)?;
        if input.is_null() || output.is_null() {
            return Err(fail(SckdStatus::NullPointer, "input or output is null"));
        }
        if batch == 0 {
            return Err(fail(SckdStatus::InvalidArgument, "batch must be at least 1"));
        }
        let t = net.spec.window;
        let expected = batch * FEET * t;
        if output_len != expected {
            return Err(fail(
                SckdStatus::Shape,
                format!("output holds {output_len} floats, {expected} needed"),
            ));
        }
        let n_in = batch * FEET * t * GRID_H * GRID_W;
        let x = ArrayView5::from_shape((batch, FEET, t, GRID_H, GRID_W), std::slice::from_raw_parts(input, n_in))
            .map_err(|e| fail(SckdStatus::Shape, e.to_string()))?;
        let y = lift(net.forward(&x.to_owned()))?;
        let dst = std::slice::from_raw_parts_mut(output, expected);
        for (d, v) in dst.iter_mut().zip(y.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Mean batch-1 latency over `samples` forward passes, in milliseconds
/// (0 when `samples` is 0).
///
/// # Safety
/// `net` must come from this library; `avg_ms` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sckd_network_latency(net: *const SckdNetwork, samples: usize, avg_ms: *mut f64) -> SckdStatus {
    guard(|| {
        let net = handle(net)?;
        let out = avg_ms.as_mut().ok_or_else(|| fail(SckdStatus::NullPointer, "avg_ms is null"))?;
        *out = lift(latency_bench_network(net, samples, 1))?.avg_ms;
        Ok(())
    })
}

/// RBF correlation map of a `[b, t]` row-major feature (rows are normalized to
/// unit length first). `taylor_order` 0 selects the exact kernel. `out`
/// receives `b * b` values.
///
/// # Safety
/// `feature` must hold `b * t` doubles and `out` `b * b` doubles.
#[no_mangle]
pub unsafe extern "C" fn sckd_correlation_map(
    feature: *const f64,
    b: usize,
    t: usize,
    gamma: f64,
    taylor_order: usize,
    out: *mut f64,
) -> SckdStatus {
    guard(|| {
        if feature.is_null() || out.is_null() {
            return Err(fail(SckdStatus::NullPointer, "feature or out is null"));
        }
        if b == 0 || t == 0 {
            return Err(fail(SckdStatus::InvalidArgument, "empty feature"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(fail(SckdStatus::InvalidArgument, format!("invalid gamma {gamma}")));
        }
        let f = ArrayView2::from_shape((b, t), std::slice::from_raw_parts(feature, b * t))
            .map_err(|e| fail(SckdStatus::Shape, e.to_string()))?;
        let mode = match taylor_order {
            0 => KernelMode::Exact,
            order => KernelMode::Taylor { order },
        };
        let g = rbf_correlation_map(f, gamma, mode);
        let dst = std::slice::from_raw_parts_mut(out, b * b);
        for (d, v) in dst.iter_mut().zip(g.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// RMSE and MAE (x100) and Pearson r (x100) over `n` paired values.
///
/// # Safety
/// `pred` and `truth` must hold `n` doubles; `out` must hold 3.
#[no_mangle]
pub unsafe extern "C" fn sckd_point_metrics(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
) -> SckdStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out.is_null() {
            return Err(fail(SckdStatus::NullPointer, "null buffer"));
        }
        let m = lift(point_metrics(
            std::slice::from_raw_parts(pred, n),
            std::slice::from_raw_parts(truth, n),
        ))?;
        let dst = std::slice::from_raw_parts_mut(out, 3);
        dst.copy_from_slice(&[m.rmse, m.mae, m.r]);
        Ok(())
    })
}
