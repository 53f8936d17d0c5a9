//! C ABI over the linecorr pipeline.
//!
//! Every function returns an [`LcStatus`]. On failure the message is kept
//! per thread and can be read with [`lc_last_error`]. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use linecorr::corr::Direction;
use linecorr::imaging::Raster;
use linecorr::patchsim::{init_params, load_checkpoint, Params};
use linecorr::pipeline::{predict_pair, PipelineConfig, Prediction};
use linecorr::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Format = 4,
    Degenerate = 5,
    NonFinite = 6,
    Io = 7,
    Panic = 8,
}

/// Direction in which a region pair was found.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcDirection {
    AToB = 0,
    BToA = 1,
    Both = 2,
}

/// One region correspondence.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcPair {
    pub a: u32,
    pub b: u32,
    pub score: f64,
    pub direction: LcDirection,
}

/// Configuration and weights.
pub struct LcModel {
    config: PipelineConfig,
    params: Params<f32>,
}

/// Similarity matrix, region maps and correspondences of one pair.
pub struct LcPrediction {
    inner: Prediction,
    corr_json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LcStatus {
    match e {
        Error::InvalidArgument(_) => LcStatus::InvalidArgument,
        Error::DimensionMismatch(_) | Error::ShapeMismatch { .. } => LcStatus::DimensionMismatch,
        Error::Format(_) | Error::Json(_) | Error::Image(_) => LcStatus::Format,
        Error::Degenerate(_) => LcStatus::Degenerate,
        Error::NonFinite(_) => LcStatus::NonFinite,
        Error::File { .. } | Error::Io(_) => LcStatus::Io,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (LcStatus, String)>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LcStatus::Panic
        }
    }
}

fn lift<T>(r: linecorr::Result<T>) -> Result<T, (LcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LcStatus, String) {
    (LcStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (LcStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn config_from(json: *const c_char) -> Result<PipelineConfig, (LcStatus, String)> {
    let cfg = if json.is_null() {
        PipelineConfig::default()
    } else {
        lift(serde_json::from_str(c_str(json, "config_json")?).map_err(Error::from))?
    };
    lift(cfg.validate())?;
    Ok(cfg)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads weights from `checkpoint`. `config_json` may be null for defaults.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_model_load(
    checkpoint: *const c_char,
    config_json: *const c_char,
    out: *mut *mut LcModel,
) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(checkpoint, "checkpoint")?;
        let config = config_from(config_json)?;
        let params = lift(load_checkpoint(Path::new(path), &config.model))?;
        *out = Box::into_raw(Box::new(LcModel { config, params }));
        Ok(())
    })
}

/// Creates a model with freshly initialized weights.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_model_init(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut LcModel,
) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = config_from(config_json)?;
        let params = lift(init_params(&config.model, seed))?;
        *out = Box::into_raw(Box::new(LcModel { config, params }));
        Ok(())
    })
}

/// Side length in pixels of the square images the model accepts.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_model_image_side(model: *const LcModel, out: *mut usize) -> LcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.config.model.image_side;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn lc_model_free(model: *mut LcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the full pipeline on two 8-bit grayscale line art images of
/// `width * height` bytes each, row-major.
///
/// # Safety
/// Buffers must hold `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_predict(
    model: *const LcModel,
    img_a: *const u8,
    img_b: *const u8,
    width: usize,
    height: usize,
    out: *mut *mut LcPrediction,
) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if img_a.is_null() {
            return Err(null("img_a"));
        }
        if img_b.is_null() {
            return Err(null("img_b"));
        }
        let len = width
            .checked_mul(height)
            .ok_or_else(|| (LcStatus::InvalidArgument, "image size overflows".to_string()))?;
        let a = std::slice::from_raw_parts(img_a, len).to_vec();
        let b = std::slice::from_raw_parts(img_b, len).to_vec();
        let ra = lift(Raster::new(width, height, 1, a))?;
        let rb = lift(Raster::new(width, height, 1, b))?;
        let inner = lift(predict_pair(&m.config, &m.params, &ra, &rb))?;
        let json = lift(serde_json::to_string(&inner.corr).map_err(Error::from))?;
        let corr_json = CString::new(json).expect("JSON has no NUL bytes");
        *out = Box::into_raw(Box::new(LcPrediction { inner, corr_json }));
        Ok(())
    })
}

/// Row-major `2N x 2N` similarity entries. The pointer lives as long as
/// the prediction.
///
/// # Safety
/// `pred` must come from this library; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_prediction_similarity(
    pred: *const LcPrediction,
    data: *mut *const f32,
    n: *mut usize,
) -> LcStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        *data.as_mut().ok_or_else(|| null("data"))? = p.inner.sim.entries().as_ptr();
        *n.as_mut().ok_or_else(|| null("n"))? = p.inner.sim.n();
        Ok(())
    })
}

/// Region label raster of image a (`side` 0) or b (`side` 1); 0 is
/// background. The pointer lives as long as the prediction.
///
/// # Safety
/// `pred` must come from this library; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_prediction_labels(
    pred: *const LcPrediction,
    side: u32,
    data: *mut *const u32,
    width: *mut usize,
    height: *mut usize,
) -> LcStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        let m = match side {
            0 => &p.inner.regions_a,
            1 => &p.inner.regions_b,
            s => return Err((LcStatus::InvalidArgument, format!("side must be 0 or 1, got {s}"))),
        };
        *data.as_mut().ok_or_else(|| null("data"))? = m.labels().data().as_ptr();
        *width.as_mut().ok_or_else(|| null("width"))? = m.width();
        *height.as_mut().ok_or_else(|| null("height"))? = m.height();
        Ok(())
    })
}

/// Number of region pairs.
///
/// # Safety
/// `pred` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_prediction_num_pairs(pred: *const LcPrediction, out: *mut usize) -> LcStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.inner.corr.pairs.len();
        Ok(())
    })
}

/// Pair number `index`.
///
/// # Safety
/// `pred` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_prediction_pair(
    pred: *const LcPrediction,
    index: usize,
    out: *mut LcPair,
) -> LcStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        let pair = p.inner.corr.pairs.get(index).ok_or_else(|| {
            (
                LcStatus::InvalidArgument,
                format!("pair index {index} out of range ({} pairs)", p.inner.corr.pairs.len()),
            )
        })?;
        *out.as_mut().ok_or_else(|| null("out"))? = LcPair {
            a: pair.a,
            b: pair.b,
            score: pair.score,
            direction: match pair.dir {
                Direction::AToB => LcDirection::AToB,
                Direction::BToA => LcDirection::BToA,
                Direction::Both => LcDirection::Both,
            },
        };
        Ok(())
    })
}

/// Correspondences as JSON. The string lives as long as the prediction.
///
/// # Safety
/// `pred` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_prediction_corr_json(pred: *const LcPrediction, out: *mut *const c_char) -> LcStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.corr_json.as_ptr();
        Ok(())
    })
}

/// Releases a prediction. Null is ignored.
///
/// # Safety
/// `pred` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn lc_prediction_free(pred: *mut LcPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}
