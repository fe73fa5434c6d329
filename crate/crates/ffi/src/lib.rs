//! C ABI over the ndistill core: checkpoints, activation caches and a few
//! pure helpers.
//!
//! Every fallible call returns an [`NdStatus`]; on failure the message is
//! kept per thread and can be read with [`nd_last_error`]. Objects are
//! opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndistill::cache::{read_container, ContainerHeader};
use ndistill::distill::{sparsity_at_step, SparsitySchedule};
use ndistill::network::{count_search_space, load_checkpoint, save_checkpoint, Model};
use ndistill::tensor::Tensor;
use ndistill::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadMagic = 4,
    VersionMismatch = 5,
    FingerprintMismatch = 6,
    Corrupt = 7,
    Shape = 8,
    NonFinite = 9,
    BufferTooSmall = 10,
    Runtime = 11,
    Panic = 12,
}

/// A loaded network.
pub struct NdModel {
    model: Model,
}

/// An activation cache read into memory.
pub struct NdCache {
    header: ContainerHeader,
    data: Tensor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NdStatus {
    match e {
        Error::Shape { .. } => NdStatus::Shape,
        Error::NonFinite(_) | Error::Diverged { .. } => NdStatus::NonFinite,
        Error::InvalidArgument(_) | Error::Config(_) => NdStatus::InvalidArgument,
        Error::Io(_) => NdStatus::Io,
        Error::BadMagic { .. } => NdStatus::BadMagic,
        Error::VersionMismatch { .. } => NdStatus::VersionMismatch,
        Error::FingerprintMismatch { .. } => NdStatus::FingerprintMismatch,
        Error::Corrupt { .. } => NdStatus::Corrupt,
        Error::Runtime(_) => NdStatus::Runtime,
    }
}

fn fail(status: NdStatus, msg: impl AsRef<str>) -> NdStatus {
    set_error(msg.as_ref());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), NdStatus>) -> NdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NdStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(NdStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: ndistill::Result<T>) -> Result<T, NdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, NdStatus> {
    if p.is_null() {
        return Err(fail(NdStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(NdStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, NdStatus> {
    p.as_ref()
        .ok_or_else(|| fail(NdStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), NdStatus> {
    if p.is_null() {
        Err(fail(NdStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an NDCK checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nd_model_load(path: *const c_char, out: *mut *mut NdModel) -> NdStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let model = lift(load_checkpoint(&path_arg(path)?))?;
        *out = Box::into_raw(Box::new(NdModel { model }));
        Ok(())
    })
}

/// Writes the model as an NDCK checkpoint.
///
/// # Safety
/// `model` must come from [`nd_model_load`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nd_model_save(model: *const NdModel, path: *const c_char) -> NdStatus {
    guard(|| {
        let m = obj(model, "model")?;
        lift(save_checkpoint(&m.model, &path_arg(path)?))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`nd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nd_model_free(model: *mut NdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable parameter count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`nd_model_load`].
#[no_mangle]
pub unsafe extern "C" fn nd_model_param_count(model: *const NdModel) -> u64 {
    model.as_ref().map_or(0, |m| m.model.param_count() as u64)
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`nd_model_load`].
#[no_mangle]
pub unsafe extern "C" fn nd_model_class_count(model: *const NdModel) -> u64 {
    model
        .as_ref()
        .map_or(0, |m| m.model.spec.class_count as u64)
}

/// Number of neighbourhoods, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`nd_model_load`].
#[no_mangle]
pub unsafe extern "C" fn nd_model_neighbourhood_count(model: *const NdModel) -> u64 {
    model.as_ref().map_or(0, |m| m.model.len() as u64)
}

/// Per-sample input shape `[C, H, W]`.
///
/// # Safety
/// `model` must come from [`nd_model_load`]; `out` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn nd_model_input_shape(model: *const NdModel, out: *mut u64) -> NdStatus {
    guard(|| {
        let m = obj(model, "model")?;
        out_ptr(out, "out")?;
        let s = &m.model.spec.input_shape;
        if s.len() != 3 {
            return Err(fail(
                NdStatus::Shape,
                format!("input rank {} is not 3", s.len()),
            ));
        }
        for (i, &d) in s.iter().enumerate() {
            *out.add(i) = d as u64;
        }
        Ok(())
    })
}

/// Logits for `batch` samples laid out `[N, C, H, W]` (row-major f32).
/// `out` receives `batch × class_count` values.
///
/// # Safety
/// `input` must hold `batch × C × H × W` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn nd_model_forward(
    model: *const NdModel,
    input: *const f32,
    batch: u64,
    out: *mut f32,
    out_len: u64,
) -> NdStatus {
    guard(|| {
        let m = obj(model, "model")?;
        if input.is_null() {
            return Err(fail(NdStatus::NullPointer, "input is null"));
        }
        out_ptr(out, "out")?;
        if batch == 0 {
            return Err(fail(NdStatus::InvalidArgument, "batch must be >= 1"));
        }
        let batch = batch as usize;
        let need = batch * m.model.spec.class_count;
        if (out_len as usize) < need {
            return Err(fail(
                NdStatus::BufferTooSmall,
                format!("output needs {need} floats, got {out_len}"),
            ));
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&m.model.spec.input_shape);
        let n: usize = shape.iter().product();
        let x = lift(Tensor::new(
            shape,
            std::slice::from_raw_parts(input, n).to_vec(),
        ))?;
        let y = lift(m.model.forward(&x))?;
        std::ptr::copy_nonoverlapping(y.data().as_ptr(), out, need);
        Ok(())
    })
}

/// Opens an NDAC activation cache. When `check_fingerprint` is nonzero the
/// stored dataset fingerprint must equal `expected_fingerprint`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nd_cache_open(
    path: *const c_char,
    check_fingerprint: bool,
    expected_fingerprint: u64,
    out: *mut *mut NdCache,
) -> NdStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let expected = check_fingerprint.then_some(expected_fingerprint);
        let (data, header) = lift(read_container(&path_arg(path)?, expected))?;
        *out = Box::into_raw(Box::new(NdCache { header, data }));
        Ok(())
    })
}

/// Releases a cache. Null is ignored.
///
/// # Safety
/// `cache` must come from [`nd_cache_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nd_cache_free(cache: *mut NdCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Writes the tensor rank to `*rank` and, when `dims` is non-null, up to
/// `cap` dimensions (sample count first).
///
/// # Safety
/// `cache` must come from [`nd_cache_open`]; `dims` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn nd_cache_dims(
    cache: *const NdCache,
    dims: *mut u64,
    cap: u64,
    rank: *mut u64,
) -> NdStatus {
    guard(|| {
        let c = obj(cache, "cache")?;
        out_ptr(rank, "rank")?;
        let d = &c.header.dims;
        *rank = d.len() as u64;
        if dims.is_null() {
            return Ok(());
        }
        if (cap as usize) < d.len() {
            return Err(fail(
                NdStatus::BufferTooSmall,
                format!("rank {} exceeds capacity {cap}", d.len()),
            ));
        }
        for (i, &x) in d.iter().enumerate() {
            *dims.add(i) = x as u64;
        }
        Ok(())
    })
}

/// Dataset fingerprint stored in the cache, or 0 for a null handle.
///
/// # Safety
/// `cache` must be null or come from [`nd_cache_open`].
#[no_mangle]
pub unsafe extern "C" fn nd_cache_fingerprint(cache: *const NdCache) -> u64 {
    cache.as_ref().map_or(0, |c| c.header.fingerprint)
}

/// Copies all activations (row-major f32) into `out`.
///
/// # Safety
/// `cache` must come from [`nd_cache_open`]; `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn nd_cache_read(cache: *const NdCache, out: *mut f32, len: u64) -> NdStatus {
    guard(|| {
        let c = obj(cache, "cache")?;
        out_ptr(out, "out")?;
        let src = c.data.data();
        if (len as usize) < src.len() {
            return Err(fail(
                NdStatus::BufferTooSmall,
                format!("cache holds {} floats, got {len}", src.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
        Ok(())
    })
}

/// Target sparsity of the cubic ramp at step `t`; NaN for an invalid
/// schedule.
#[no_mangle]
pub extern "C" fn nd_sparsity_at_step(
    final_sparsity: f64,
    ramp_steps: u64,
    hold_steps: u64,
    t: u64,
) -> f64 {
    match SparsitySchedule::new(final_sparsity, ramp_steps as usize, hold_steps as usize) {
        Ok(s) => sparsity_at_step(&s, t as usize),
        Err(e) => {
            set_error(&e.to_string());
            f64::NAN
        }
    }
}

/// Number of students in the search space: the product of the candidate
/// set sizes, saturating at `UINT64_MAX`.
///
/// # Safety
/// `sizes` must hold `n` values (it may be null when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn nd_search_space_size(sizes: *const u64, n: u64) -> u64 {
    if n == 0 {
        return 1;
    }
    if sizes.is_null() {
        set_error("sizes is null");
        return 0;
    }
    let s: Vec<usize> = std::slice::from_raw_parts(sizes, n as usize)
        .iter()
        .map(|&x| x as usize)
        .collect();
    u64::try_from(count_search_space(&s)).unwrap_or(u64::MAX)
}
