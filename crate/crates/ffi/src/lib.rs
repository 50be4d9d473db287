//! C ABI over `mgic-core`.
//!
//! Models are opaque handles created from an architecture JSON or a
//! checkpoint and released with `mgic_model_free`. Every fallible call
//! returns an `MgicStatus`; on failure `mgic_last_error` describes the cause
//! for the calling thread.

#![allow(unsafe_code)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mgic::checkpoint::{load_checkpoint, save_checkpoint};
use mgic::cost::{closed_form_mgic_params, cost_report};
use mgic::error::Error;
use mgic::models::{build_network, ArchSpec, Network};
use mgic::nn::infer;
use mgic::params::ParamStore;
use mgic::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Numerical = 5,
    Format = 6,
    Corrupt = 7,
    Version = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A network and its parameters.
pub struct MgicModel {
    net: Network,
    store: ParamStore<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MgicStatus {
    match e {
        Error::Dimension(_) => MgicStatus::Dimension,
        Error::Config(_) | Error::Schema { .. } | Error::Contract(_) | Error::Data(_) => MgicStatus::Config,
        Error::Numerical(_) | Error::Divergence { .. } => MgicStatus::Numerical,
        Error::Format { .. } => MgicStatus::Format,
        Error::Corrupt(_) => MgicStatus::Corrupt,
        Error::Version { .. } => MgicStatus::Version,
        Error::Io(_) => MgicStatus::Io,
    }
}

/// Runs `f`, converting errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), (MgicStatus, String)>) -> MgicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgicStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MgicStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (MgicStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MgicStatus, String) {
    (MgicStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MgicStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MgicStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn model_arg<'a>(m: *const MgicModel) -> Result<&'a MgicModel, (MgicStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn boxed(net: Network, store: ParamStore<f32>) -> *mut MgicModel {
    Box::into_raw(Box::new(MgicModel { net, store }))
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[unsafe(no_mangle)]
pub extern "C" fn mgic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn mgic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialised network from an architecture JSON document.
///
/// # Safety
/// `arch_json` must be a NUL-terminated string and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_from_json(
    arch_json: *const c_char,
    seed: u64,
    out: *mut *mut MgicModel,
) -> MgicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(arch_json, "arch_json")?;
        let arch: ArchSpec = mgic::cli::parse_config(text).map_err(core_err)?;
        let mut store = ParamStore::new();
        let net = build_network(&arch, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(core_err)?;
        *out = boxed(net, store);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_load(path: *const c_char, out: *mut *mut MgicModel) -> MgicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let (net, store) = load_checkpoint(path).map_err(core_err)?;
        *out = boxed(net, store);
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_save(model: *const MgicModel, path: *const c_char) -> MgicStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_checkpoint(path, &m.net, &m.store).map_err(core_err)
    })
}

/// Total number of learnable scalars.
///
/// # Safety
/// `model` must come from this library and `out` be valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_param_count(model: *const MgicModel, out: *mut u64) -> MgicStatus {
    guard(|| {
        let m = model_arg(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.store.count() as u64;
        Ok(())
    })
}

/// Per-sample input shape `[C, H, W]`.
///
/// # Safety
/// `model` must come from this library and `out` point to 3 writable values.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_input_shape(model: *const MgicModel, out: *mut usize) -> MgicStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = m.net.arch.input_shape();
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&shape);
        Ok(())
    })
}

/// Eval-mode forward pass on `batch` samples laid out `N×C×H×W`.
///
/// The output element count is stored in `written`. If `output_len` is too
/// small nothing is written to `output` and `MGIC_STATUS_BUFFER_TOO_SMALL`
/// is returned, with the required length in `written`.
///
/// # Safety
/// `input` must hold `batch·C·H·W` floats, `output` `output_len` floats.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_forward(
    model: *const MgicModel,
    input: *const f32,
    batch: usize,
    output: *mut f32,
    output_len: usize,
    written: *mut usize,
) -> MgicStatus {
    guard(|| {
        let m = model_arg(model)?;
        if input.is_null() {
            return Err(null("input"));
        }
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let [c, h, w] = m.net.arch.input_shape();
        let n = batch
            .checked_mul(c * h * w)
            .filter(|&n| n > 0)
            .ok_or_else(|| (MgicStatus::InvalidArgument, format!("batch {batch} gives no input elements")))?;
        let x = Tensor::from_vec([batch, c, h, w], std::slice::from_raw_parts(input, n).to_vec()).map_err(core_err)?;
        let y = infer(&m.net, &m.store, &x).map_err(core_err)?;
        *written = y.numel();
        if output_len < y.numel() {
            return Err((
                MgicStatus::BufferTooSmall,
                format!("output needs {} floats, buffer holds {output_len}", y.numel()),
            ));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        std::slice::from_raw_parts_mut(output, y.numel()).copy_from_slice(y.data());
        Ok(())
    })
}

/// Cost report of one sample as JSON, NUL-terminated.
///
/// `needed` receives the byte length including the terminator. Pass a null
/// or short buffer to query it (`MGIC_STATUS_BUFFER_TOO_SMALL`).
///
/// # Safety
/// `buf` must hold `len` bytes or be null.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_cost_json(
    model: *const MgicModel,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> MgicStatus {
    guard(|| {
        let m = model_arg(model)?;
        let needed = needed.as_mut().ok_or_else(|| null("needed"))?;
        let [c, h, w] = m.net.arch.input_shape();
        let report = cost_report(&m.net, &m.store, &[1, c, h, w]).map_err(core_err)?;
        let json = serde_json::to_string(&report).map_err(|e| (MgicStatus::Config, e.to_string()))?;
        *needed = json.len() + 1;
        if buf.is_null() || len < json.len() + 1 {
            return Err((MgicStatus::BufferTooSmall, format!("cost report needs {} bytes", json.len() + 1)));
        }
        let dst = std::slice::from_raw_parts_mut(buf.cast::<u8>(), json.len() + 1);
        dst[..json.len()].copy_from_slice(json.as_bytes());
        dst[json.len()] = 0;
        Ok(())
    })
}

/// Closed-form weight count of a simple-conv MGIC block.
///
/// # Safety
/// `out` must be valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_closed_form_params(
    c: usize,
    s_g: usize,
    s_c: usize,
    d: usize,
    out: *mut u64,
) -> MgicStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = closed_form_mgic_params(c, s_g, s_c, d).map_err(core_err)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn mgic_model_free(model: *mut MgicModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
