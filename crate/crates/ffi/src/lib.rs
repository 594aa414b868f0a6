//! C interface to the `sinr` library.
//!
//! Every fallible function returns a [`SinrStatus`]. On failure a message is
//! kept per thread and can be read with [`sinr_last_error`] until the next
//! call on that thread. Models are opaque handles owned by the caller and
//! released with [`sinr_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sinr::eval::{average_precision, ModelPredictor};
use sinr::geo::{encode_location, GeoCoord, COORD_ENCODING_DIM};
use sinr::net::SinrModel;
use sinr::Error;

/// Result codes. `SINR_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Not a model file, unsupported version, truncated or corrupt.
    InvalidFile = 4,
    UnknownSpecies = 5,
    /// The model needs environmental rasters, which this interface does not
    /// take.
    Unsupported = 6,
    BufferTooSmall = 7,
    /// A bug: an internal error or a caught panic.
    Internal = 8,
}

/// A loaded model.
pub struct SinrModelHandle {
    model: SinrModel,
}

struct Failure(SinrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => SinrStatus::Io,
            Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Corrupt(_) => SinrStatus::InvalidFile,
            Error::UnknownSpecies(_) => SinrStatus::UnknownSpecies,
            Error::MissingRasters => SinrStatus::Unsupported,
            Error::InvalidCoord { .. }
            | Error::InvalidArgument(_)
            | Error::DegenerateLabels(_)
            | Error::Shape(_)
            | Error::Empty(_) => SinrStatus::InvalidArgument,
            _ => SinrStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SinrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SinrStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SinrStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SinrStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, n))
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            SinrStatus::InvalidArgument,
            format!("`{what}` is not UTF-8"),
        )
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sinr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn sinr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a model file. On success `*out_model` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sinr_model_load(
    path: *const c_char,
    out_model: *mut *mut SinrModelHandle,
) -> SinrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = std::ptr::null_mut();
        let model = SinrModel::load(c_str(path, "path")?)?;
        *slot = Box::into_raw(Box::new(SinrModelHandle { model }));
        Ok(())
    })
}

/// Releases a handle from [`sinr_model_load`]. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sinr_model_free(model: *mut SinrModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of species the model predicts.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sinr_model_n_species(
    model: *const SinrModelHandle,
    out_n: *mut usize,
) -> SinrStatus {
    guard(|| {
        *out(out_n, "out_n")? = deref(model, "model")?.model.species.len();
        Ok(())
    })
}

/// Output column of a species id.
///
/// # Safety
/// Pointers must be valid and `species_id` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sinr_model_species_index(
    model: *const SinrModelHandle,
    species_id: *const c_char,
    out_index: *mut usize,
) -> SinrStatus {
    guard(|| {
        let m = &deref(model, "model")?.model;
        let id = c_str(species_id, "species_id")?;
        let slot = out(out_index, "out_index")?;
        *slot = m
            .species_index(id)
            .ok_or_else(|| Error::UnknownSpecies(id.to_owned()))?;
        Ok(())
    })
}

/// Copies the id of output column `index` into `buf` with a terminating NUL.
/// `*out_len` receives the id length without the NUL, also when the buffer
/// is too small.
///
/// # Safety
/// `buf` must hold `buf_len` bytes; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sinr_model_species_id(
    model: *const SinrModelHandle,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> SinrStatus {
    guard(|| {
        let m = &deref(model, "model")?.model;
        let id = m.species.get(index).ok_or_else(|| {
            Failure(
                SinrStatus::InvalidArgument,
                format!("index {index} out of range for {} species", m.species.len()),
            )
        })?;
        *out(out_len, "out_len")? = id.len();
        if buf_len < id.len() + 1 {
            return Err(Failure(
                SinrStatus::BufferTooSmall,
                format!("need {} bytes", id.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(id.as_ptr().cast(), buf, id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// Presence probabilities at `n` locations, written row-major into `out`
/// (`n` rows of `n_species` values). Only models trained on coordinates
/// alone are supported.
///
/// # Safety
/// `lons` and `lats` must hold `n` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sinr_model_predict(
    model: *const SinrModelHandle,
    lons: *const f64,
    lats: *const f64,
    n: usize,
    out: *mut f32,
    out_len: usize,
) -> SinrStatus {
    guard(|| {
        let m = &deref(model, "model")?.model;
        if m.input_mode.needs_env() {
            return Err(Error::MissingRasters.into());
        }
        let (lons, lats) = (slice(lons, n, "lons")?, slice(lats, n, "lats")?);
        let need = n * m.species.len();
        if out_len < need {
            return Err(Failure(
                SinrStatus::BufferTooSmall,
                format!("need {need} values"),
            ));
        }
        let coords = lons
            .iter()
            .zip(lats)
            .map(|(&lon, &lat)| GeoCoord::new(lon, lat))
            .collect::<sinr::Result<Vec<_>>>()?;
        let y = ModelPredictor::new(m, None).predict_f32(&coords)?;
        if need > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            let dst = std::slice::from_raw_parts_mut(out, need);
            for (d, v) in dst.iter_mut().zip(y.iter()) {
                *d = *v;
            }
        }
        Ok(())
    })
}

/// The four-value sinusoidal encoding of a coordinate.
///
/// # Safety
/// `out` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn sinr_encode_location(lon: f64, lat: f64, out: *mut f64) -> SinrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let e = encode_location(GeoCoord::new(lon, lat)?);
        std::slice::from_raw_parts_mut(out, COORD_ENCODING_DIM).copy_from_slice(&e);
        Ok(())
    })
}

/// Average precision of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn sinr_average_precision(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_ap: *mut f64,
) -> SinrStatus {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        let labels: Vec<bool> = slice(labels, n, "labels")?
            .iter()
            .map(|&l| l != 0)
            .collect();
        *out(out_ap, "out_ap")? = average_precision(scores, &labels)?;
        Ok(())
    })
}
