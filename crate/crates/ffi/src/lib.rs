//! C ABI over the votenet library.
//!
//! Conventions:
//! - Every fallible function returns a [`VnStatus`]; on failure a message is
//!   stored per thread and can be read with [`vn_last_error_message`].
//! - Models and rasters are opaque handles created by `*_new` / `*_load` /
//!   `*_read` functions and released with the matching `*_free`.
//! - Panics never cross the boundary; they are reported as `VN_STATUS_PANIC`.
//! - Images are row-major `H×W×3` doubles in `[0, 1]`; probability maps are
//!   `H×W×2` (background, contour).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use votenet::autodiff::Tensor;
use votenet::checkpoint::{load_checkpoint, save_checkpoint};
use votenet::data::{generate_scene, read_raster, LabeledRaster, SceneSpec};
use votenet::inference::{compute_metrics, plan_tiles, predict_image, WindowModel};
use votenet::network::{NetworkConfig, VoteNet};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Runtime = 5,
    Panic = 6,
}

/// Opaque model handle.
pub struct VnModel {
    inner: VoteNet,
}

/// Opaque labelled raster handle.
pub struct VnRaster {
    inner: LabeledRaster,
}

/// Accuracy and F1 in percent, BER in `[0, 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VnMetrics {
    pub accuracy: f64,
    pub ber: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(VnStatus, String);

impl Failure {
    fn new(status: VnStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            VnStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::new(VnStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(VnStatus::InvalidArgument, format!("path is not UTF-8: {e}")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(VnStatus::NullPointer, "output pointer is null"))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(VnStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn vn_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a freshly initialised model for `size×size` windows with
/// `segments` segment slices. `size` must be a multiple of 8.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_model_new(segments: u32, size: u32, seed: u64, out: *mut *mut VnModel) -> VnStatus {
    guard(|| {
        let out = out_arg(out)?;
        let config = NetworkConfig {
            segments: segments as usize,
            height: size as usize,
            width: size as usize,
            ..NetworkConfig::default()
        };
        let inner = VoteNet::new(config, seed).map_err(|e| Failure::new(VnStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(VnModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint written by `votenet train` or [`vn_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vn_model_load(path: *const c_char, out: *mut *mut VnModel) -> VnStatus {
    guard(|| {
        let out = out_arg(out)?;
        let path = path_arg(path)?;
        let inner = load_checkpoint(&path).map_err(|e| Failure::new(VnStatus::Checkpoint, e))?;
        *out = Box::into_raw(Box::new(VnModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vn_model_save(model: *const VnModel, path: *const c_char) -> VnStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let path = path_arg(path)?;
        save_checkpoint(&path, &model.inner).map_err(|e| Failure::new(VnStatus::Io, e))
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vn_model_free(model: *mut VnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window size of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vn_model_window(model: *const VnModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.window() as u32)
}

/// Sliding-window prediction over an `height×width×3` image with the given
/// stride. Writes `height×width×2` averaged probabilities to `out_probs`.
///
/// # Safety
/// `image` must point to `image_len` doubles and `out_probs` to `out_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vn_model_predict(
    model: *const VnModel,
    image: *const f64,
    image_len: usize,
    height: u32,
    width: u32,
    stride: u32,
    out_probs: *mut f64,
    out_len: usize,
) -> VnStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        if image.is_null() || out_probs.is_null() {
            return Err(Failure::new(VnStatus::NullPointer, "image or output buffer is null"));
        }
        let (h, w) = (height as usize, width as usize);
        if image_len != h * w * 3 || out_len != h * w * 2 {
            return Err(Failure::new(
                VnStatus::InvalidArgument,
                format!("expected {} image and {} output values, got {image_len} and {out_len}", h * w * 3, h * w * 2),
            ));
        }
        let data = std::slice::from_raw_parts(image, image_len).to_vec();
        let tensor = Tensor::new(&[h, w, 3], data).map_err(|e| Failure::new(VnStatus::InvalidArgument, e))?;
        let plan = plan_tiles(h, w, model.inner.window(), stride as usize)
            .map_err(|e| Failure::new(VnStatus::InvalidArgument, e))?;
        let map = predict_image(&tensor, &model.inner, &plan).map_err(|e| Failure::new(VnStatus::Runtime, e))?;
        std::slice::from_raw_parts_mut(out_probs, out_len).copy_from_slice(&map.probabilities());
        Ok(())
    })
}

/// Reads `<stem>.image.png`, `<stem>.mask.png` and, if present, `<stem>.ids.png`.
///
/// # Safety
/// `stem` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vn_raster_read(stem: *const c_char, out: *mut *mut VnRaster) -> VnStatus {
    guard(|| {
        let out = out_arg(out)?;
        let stem = path_arg(stem)?;
        let inner = read_raster(&stem).map_err(|e| Failure::new(VnStatus::Io, e))?;
        *out = Box::into_raw(Box::new(VnRaster { inner }));
        Ok(())
    })
}

/// Generates a synthetic scene with the default field layout.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vn_raster_generate(seed: u64, height: u32, width: u32, out: *mut *mut VnRaster) -> VnStatus {
    guard(|| {
        let out = out_arg(out)?;
        let spec = SceneSpec { height: height as usize, width: width as usize, seed, ..SceneSpec::default() };
        let inner = generate_scene(&spec).map_err(|e| Failure::new(VnStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(VnRaster { inner }));
        Ok(())
    })
}

/// # Safety
/// `raster` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vn_raster_free(raster: *mut VnRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// Writes height and width; either output may be null.
///
/// # Safety
/// `raster` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vn_raster_dims(raster: *const VnRaster, height: *mut u32, width: *mut u32) -> VnStatus {
    guard(|| {
        let r = ref_arg(raster, "raster")?;
        if let Some(h) = height.as_mut() {
            *h = r.inner.height as u32;
        }
        if let Some(w) = width.as_mut() {
            *w = r.inner.width as u32;
        }
        Ok(())
    })
}

/// Borrowed pointer to the `H×W×3` image; valid while the handle lives.
///
/// # Safety
/// `raster` must be null or a live handle; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn vn_raster_image(raster: *const VnRaster, len: *mut usize) -> *const f64 {
    match raster.as_ref() {
        Some(r) => {
            if let Some(l) = len.as_mut() {
                *l = r.inner.image.len();
            }
            r.inner.image.as_ptr()
        }
        None => ptr::null(),
    }
}

/// Borrowed pointer to the `H×W` 0/1 mask; valid while the handle lives.
///
/// # Safety
/// `raster` must be null or a live handle; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn vn_raster_mask(raster: *const VnRaster, len: *mut usize) -> *const u8 {
    match raster.as_ref() {
        Some(r) => {
            if let Some(l) = len.as_mut() {
                *l = r.inner.mask.len();
            }
            r.inner.mask.as_ptr()
        }
        None => ptr::null(),
    }
}

/// Accuracy, BER and F1 of binary predictions against ground truth.
///
/// # Safety
/// `pred` and `truth` must each point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vn_metrics(pred: *const u8, truth: *const u8, len: usize, out: *mut VnMetrics) -> VnStatus {
    guard(|| {
        let out = out_arg(out)?;
        if pred.is_null() || truth.is_null() {
            return Err(Failure::new(VnStatus::NullPointer, "label buffer is null"));
        }
        let p = std::slice::from_raw_parts(pred, len);
        let t = std::slice::from_raw_parts(truth, len);
        let m = compute_metrics(p, t).map_err(|e| Failure::new(VnStatus::InvalidArgument, e))?;
        *out = VnMetrics { accuracy: m.accuracy, ber: m.ber, f1: m.f1 };
        Ok(())
    })
}
