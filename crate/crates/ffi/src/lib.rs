//! C ABI over the `stableworld` eviction engine and similarity scorer.
//!
//! Frames cross the boundary as row-major 8-bit grayscale buffers with
//! explicit width, height and row stride. Decisions, traces and scores come
//! back as JSON strings in the same schema as the CLI trace; release them
//! with [`sw_string_free`]. Every call returns an [`SwStatus`]; the message
//! for the most recent failure on the calling thread is available from
//! [`sw_last_error_message`].
//!
//! An engine handle is single-threaded. Distinct handles are independent.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stableworld::eviction::{EvictionConfig, EvictionEngine};
use stableworld::similarity::{MetricConfig, Scorer};
use stableworld::{Error, GrayImage};

pub const SW_ABI_VERSION: u32 = 1;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    UnknownPreset = 3,
    InvalidConfig = 4,
    DimensionMismatch = 5,
    InvalidImage = 6,
    ClosedHandle = 7,
    Json = 8,
    Internal = 9,
}

/// Opaque engine handle.
pub struct SwEngine {
    engine: Option<EvictionEngine>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(SwStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownPreset(_) => SwStatus::UnknownPreset,
            Error::InvalidConfig(_) => SwStatus::InvalidConfig,
            Error::DimensionMismatch { .. } => SwStatus::DimensionMismatch,
            Error::InvalidDimensions { .. } | Error::ImageTooSmall { .. } | Error::Malformed(_) => {
                SwStatus::InvalidImage
            }
            Error::Json(_) => SwStatus::Json,
            _ => SwStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(SwStatus::Json, e.to_string())
    }
}

fn fail<T>(status: SwStatus, msg: &str) -> Result<T, Failure> {
    Err(Failure(status, msg.to_owned()))
}

/// Runs `f`, converting errors and panics into a status plus a thread-local
/// message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SwStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SwStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(SwStatus::NullPointer, &format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SwStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn read_image(data: *const u8, width: usize, height: usize, stride: usize) -> Result<GrayImage, Failure> {
    if data.is_null() {
        return fail(SwStatus::NullPointer, "frame buffer is null");
    }
    let stride = if stride == 0 { width } else { stride };
    if stride < width {
        return fail(SwStatus::InvalidImage, "stride is smaller than width");
    }
    if width == 0 || height == 0 {
        return fail(SwStatus::InvalidImage, "frame has zero size");
    }
    let len = stride
        .checked_mul(height - 1)
        .and_then(|n| n.checked_add(width))
        .ok_or_else(|| Failure(SwStatus::InvalidImage, "frame size overflows".into()))?;
    let raw = std::slice::from_raw_parts(data, len);
    let pixels = if stride == width {
        raw.to_vec()
    } else {
        raw.chunks(stride).flat_map(|row| &row[..width]).copied().collect()
    };
    Ok(GrayImage::new(width, height, pixels)?)
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(SwStatus::Internal, "string contains NUL".into()))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(SwStatus::NullPointer, "output pointer is null");
    }
    *out = value;
    Ok(())
}

unsafe fn engine_mut<'a>(h: *mut SwEngine) -> Result<&'a mut EvictionEngine, Failure> {
    match h.as_mut() {
        None => fail(SwStatus::NullPointer, "engine handle is null"),
        Some(SwEngine { engine: None }) => fail(SwStatus::ClosedHandle, "engine handle is closed"),
        Some(SwEngine { engine: Some(e) }) => Ok(e),
    }
}

fn new_handle(engine: EvictionEngine) -> *mut SwEngine {
    Box::into_raw(Box::new(SwEngine { engine: Some(engine) }))
}

#[no_mangle]
pub extern "C" fn sw_abi_version() -> u32 {
    SW_ABI_VERSION
}

/// Creates an engine from a preset name: `matrix_game`, `open_oasis` or
/// `gamecraft`.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_create_preset(name: *const c_char, out: *mut *mut SwEngine) -> SwStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwStatus::NullPointer, "output pointer is null");
        }
        let engine = EvictionEngine::from_preset(read_str(name, "preset name")?)?;
        write_out(out, new_handle(engine))
    })
}

/// Creates an engine from an eviction config JSON object. Missing fields
/// take the `matrix_game` values.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_create_json(config_json: *const c_char, out: *mut *mut SwEngine) -> SwStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwStatus::NullPointer, "output pointer is null");
        }
        let cfg: EvictionConfig = serde_json::from_str(read_str(config_json, "config")?)?;
        let engine = EvictionEngine::new(cfg)?;
        write_out(out, new_handle(engine))
    })
}

/// Pushes one frame. `stride` is the row pitch in bytes, or 0 for `width`.
/// On success `*decision_json` holds the eviction decision as JSON, or null
/// while the window is still filling.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_push(
    engine: *mut SwEngine,
    data: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    payload_id: *const c_char,
    decision_json: *mut *mut c_char,
) -> SwStatus {
    guard(|| {
        if decision_json.is_null() {
            return fail(SwStatus::NullPointer, "output pointer is null");
        }
        *decision_json = ptr::null_mut();
        let e = engine_mut(engine)?;
        let id = read_str(payload_id, "payload id")?.to_owned();
        let img = read_image(data, width, height, stride)?;
        if let Some(d) = e.push(img, id)? {
            *decision_json = to_c_string(serde_json::to_string(&d)?)?;
        }
        Ok(())
    })
}

/// Full trace so far as JSON, in the CLI trace schema.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_trace_json(engine: *mut SwEngine, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let text = serde_json::to_string(e.trace())?;
        write_out(out, to_c_string(text)?)
    })
}

/// Resolved config as JSON.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_config_json(engine: *mut SwEngine, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let text = serde_json::to_string(e.config())?;
        write_out(out, to_c_string(text)?)
    })
}

/// Number of frames currently in the window.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_window_len(engine: *mut SwEngine, out: *mut usize) -> SwStatus {
    guard(|| {
        let n = engine_mut(engine)?.state().len();
        write_out(out, n)
    })
}

/// Releases the engine's window and caches. Later calls on the handle
/// report `ClosedHandle`; the handle itself stays valid until
/// [`sw_engine_free`].
#[no_mangle]
pub unsafe extern "C" fn sw_engine_close(engine: *mut SwEngine) -> SwStatus {
    guard(|| {
        match engine.as_mut() {
            None => return fail(SwStatus::NullPointer, "engine handle is null"),
            Some(h) => h.engine = None,
        }
        Ok(())
    })
}

/// Destroys a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sw_engine_free(engine: *mut SwEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Scores frame `b` against frame `a`. `metric_config_json` may be null for
/// the default ORB metric, or a metric config JSON object such as
/// `{"metric":"ssim"}`. Writes the score JSON to `*score_json`.
#[no_mangle]
pub unsafe extern "C" fn sw_similarity(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    metric_config_json: *const c_char,
    score_json: *mut *mut c_char,
) -> SwStatus {
    guard(|| {
        if score_json.is_null() {
            return fail(SwStatus::NullPointer, "output pointer is null");
        }
        let cfg: MetricConfig = if metric_config_json.is_null() {
            MetricConfig::default()
        } else {
            serde_json::from_str(read_str(metric_config_json, "metric config")?)?
        };
        let ia = read_image(a, width, height, stride)?;
        let ib = read_image(b, width, height, stride)?;
        let score = Scorer::with_capacity(cfg, 2)?.score(&ia, &ib)?;
        write_out(score_json, to_c_string(serde_json::to_string(&score)?)?)
    })
}

/// Frees a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn take(s: *mut c_char) -> String {
        assert!(!s.is_null());
        let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
        unsafe { sw_string_free(s) };
        out
    }

    fn last_error() -> String {
        let p = sw_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
    }

    #[test]
    fn unknown_preset_and_bad_config() {
        let mut h = ptr::null_mut();
        let st = unsafe { sw_engine_create_preset(c"hunyuan".as_ptr(), &mut h) };
        assert_eq!(st, SwStatus::UnknownPreset);
        assert!(h.is_null());
        assert!(last_error().contains("hunyuan"));
        let st = unsafe { sw_engine_create_json(c"{\"theta\": 1.5}".as_ptr(), &mut h) };
        assert_eq!(st, SwStatus::InvalidConfig);
        let st = unsafe { sw_engine_create_json(c"{\"theta\": ".as_ptr(), &mut h) };
        assert_eq!(st, SwStatus::Json);
        let st = unsafe { sw_engine_create_preset(ptr::null(), &mut h) };
        assert_eq!(st, SwStatus::NullPointer);
    }

    #[test]
    fn strided_buffers_drop_padding() {
        let data: Vec<u8> = (0..4 * 3).map(|i| i as u8).collect();
        let img = unsafe { read_image(data.as_ptr(), 3, 3, 4) }.ok().unwrap();
        assert_eq!(img.data(), &[0, 1, 2, 4, 5, 6, 8, 9, 10]);
        assert!(unsafe { read_image(data.as_ptr(), 4, 3, 3) }.is_err());
    }

    #[test]
    fn lifecycle() {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { sw_engine_create_preset(c"open_oasis".as_ptr(), &mut h) }, SwStatus::Ok);
        assert!(sw_last_error_message().is_null());
        let mut cfg = ptr::null_mut();
        assert_eq!(unsafe { sw_engine_config_json(h, &mut cfg) }, SwStatus::Ok);
        assert!(take(cfg).contains("\"window_size\":16"));
        let frame = vec![7u8; 64 * 64];
        let mut d = ptr::null_mut();
        let st = unsafe { sw_engine_push(h, frame.as_ptr(), 64, 64, 0, c"f0".as_ptr(), &mut d) };
        assert_eq!(st, SwStatus::Ok);
        assert!(d.is_null());
        let small = vec![7u8; 32 * 32];
        let st = unsafe { sw_engine_push(h, small.as_ptr(), 32, 32, 0, c"f1".as_ptr(), &mut d) };
        assert_eq!(st, SwStatus::DimensionMismatch);
        let mut n = 0;
        assert_eq!(unsafe { sw_engine_window_len(h, &mut n) }, SwStatus::Ok);
        assert_eq!(n, 1);
        assert_eq!(unsafe { sw_engine_close(h) }, SwStatus::Ok);
        let st = unsafe { sw_engine_push(h, frame.as_ptr(), 64, 64, 0, c"f2".as_ptr(), &mut d) };
        assert_eq!(st, SwStatus::ClosedHandle);
        unsafe { sw_engine_free(h) };
    }

    #[test]
    fn cosine_of_self_is_one() {
        let img: Vec<u8> = (0..32 * 24).map(|i| (i * 37 % 251) as u8).collect();
        let mut out = ptr::null_mut();
        let st = unsafe {
            sw_similarity(img.as_ptr(), img.as_ptr(), 32, 24, 0, c"{\"metric\":\"cosine\"}".as_ptr(), &mut out)
        };
        assert_eq!(st, SwStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["value"], 1.0);
        assert_eq!(v["status"], "OK");
    }
}
