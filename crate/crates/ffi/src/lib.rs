//! C ABI over `valence-core`.
//!
//! Every fallible function returns a [`ValenceStatus`]; on failure the
//! message is available from [`valence_last_error_message`] on the same
//! thread. Models and peak lists are opaque handles released with their
//! `_free` function. Array arguments are `(pointer, length)` pairs; output
//! arrays are caller-allocated unless stated otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use valence_core::bayes::{classify, posterior_variance, sample_posterior, ClassZones, Outcome, ValencePosterior};
use valence_core::eval::mann_whitney_u;
use valence_core::nn::{load_model, predict_from_prefix, DeterministicPrefix, ModelConfig, ModelParams};
use valence_core::signal::{detect_r_peaks, zero_pad, zscore, EcgRecord, PreparedSeries};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValenceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Signal = 4,
    Model = 5,
    Posterior = 6,
    Statistics = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn valence_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

struct Failure(ValenceStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ValenceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ValenceStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ValenceStatus::Panic
        }
    }
}

fn err<E: std::fmt::Display>(status: ValenceStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn null(what: &str) -> Failure {
    Failure(ValenceStatus::NullPointer, format!("{what} is NULL"))
}

/// # Safety
/// `ptr` must be NULL only when `len` is 0, otherwise point to `len` values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// As [`slice`], for writable memory.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be NULL or valid for one write.
unsafe fn write_out<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

/// Trained model handle.
pub struct ValenceModel {
    params: ModelParams,
    config: ModelConfig,
}

/// R-peak sample indices returned by [`valence_detect_r_peaks`].
pub struct ValencePeakList {
    indices: Vec<usize>,
}

fn prepare(ibi: &[f64], length: usize) -> Result<PreparedSeries, Failure> {
    if let Some(bad) = ibi.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Failure(ValenceStatus::InvalidArgument, format!("invalid interval {bad}")));
    }
    let z = zscore(ibi).map_err(err(ValenceStatus::Signal))?;
    Ok(zero_pad(&z, z.len()).map_err(err(ValenceStatus::Signal))?.fit_to(length))
}

/// Loads `model.meta`/`model.bin` from the directory `dir` (UTF-8 path).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn valence_model_load(dir: *const c_char, out: *mut *mut ValenceModel) -> ValenceStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Failure(ValenceStatus::InvalidArgument, "dir is not UTF-8".into()))?;
        let (params, config) = load_model(Path::new(path)).map_err(err(ValenceStatus::Io))?;
        let handle = Box::into_raw(Box::new(ValenceModel { params, config }));
        write_out(out, handle, "out").inspect_err(|_| drop(Box::from_raw(handle)))
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from [`valence_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn valence_model_free(model: *mut ValenceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input length the model was trained with, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn valence_model_input_length(model: *const ValenceModel) -> usize {
    model.as_ref().map_or(0, |m| m.config.input_length)
}

/// Dropout-off prediction on the `[0, 1]` label scale for raw inter-beat
/// intervals in seconds (z-scored, then padded or truncated to the input
/// length).
///
/// # Safety
/// `model` must be a live handle, `ibi` must hold `len` values and `out`
/// must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn valence_model_predict(
    model: *const ValenceModel,
    ibi: *const f64,
    len: usize,
    out: *mut f64,
) -> ValenceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = prepare(slice(ibi, len, "ibi")?, m.config.input_length)?;
        let prefix = DeterministicPrefix::compute(&x, &m.params, &m.config).map_err(err(ValenceStatus::Model))?;
        let y = predict_from_prefix(&prefix, &m.params, &m.config, false, 0).map_err(err(ValenceStatus::Model))?;
        write_out(out, y, "out")
    })
}

/// Writes `n_passes` Monte-Carlo dropout predictions for the intervals into
/// `out_samples`.
///
/// # Safety
/// `model` must be a live handle, `ibi` must hold `len` values and
/// `out_samples` must have room for `n_passes` values.
#[no_mangle]
pub unsafe extern "C" fn valence_model_sample_posterior(
    model: *const ValenceModel,
    ibi: *const f64,
    len: usize,
    n_passes: usize,
    seed: u64,
    out_samples: *mut f64,
) -> ValenceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = prepare(slice(ibi, len, "ibi")?, m.config.input_length)?;
        let out = slice_mut(out_samples, n_passes, "out_samples")?;
        let post = sample_posterior(&x, &m.params, &m.config, n_passes, seed).map_err(err(ValenceStatus::Posterior))?;
        out.copy_from_slice(post.samples());
        Ok(())
    })
}

/// Detects R-peaks in a single-lead ECG (millivolts) sampled at
/// `sample_rate_hz`. The list is returned through `out`.
///
/// # Safety
/// `samples` must hold `len` values; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn valence_detect_r_peaks(
    samples: *const f64,
    len: usize,
    sample_rate_hz: f64,
    out: *mut *mut ValencePeakList,
) -> ValenceStatus {
    guard(|| {
        let ecg = EcgRecord::new("", "", sample_rate_hz, slice(samples, len, "samples")?.to_vec());
        let beats = detect_r_peaks(&ecg).map_err(err(ValenceStatus::Signal))?;
        let handle = Box::into_raw(Box::new(ValencePeakList {
            indices: beats.r_peak_indices,
        }));
        write_out(out, handle, "out").inspect_err(|_| drop(Box::from_raw(handle)))
    })
}

/// Number of peaks, or 0 for NULL.
///
/// # Safety
/// `list` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn valence_peak_list_len(list: *const ValencePeakList) -> usize {
    list.as_ref().map_or(0, |l| l.indices.len())
}

/// Peak sample indices, valid while the list is alive; NULL for NULL.
///
/// # Safety
/// `list` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn valence_peak_list_data(list: *const ValencePeakList) -> *const usize {
    list.as_ref().map_or(ptr::null(), |l| l.indices.as_ptr())
}

/// Releases a peak list; NULL is ignored.
///
/// # Safety
/// `list` must come from [`valence_detect_r_peaks`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn valence_peak_list_free(list: *mut ValencePeakList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// Z-scores `len` intervals and zero-pads them to `target_length` values in
/// `out`.
///
/// # Safety
/// `ibi` must hold `len` values and `out` must have room for
/// `target_length` values.
#[no_mangle]
pub unsafe extern "C" fn valence_prepare_ibi(
    ibi: *const f64,
    len: usize,
    target_length: usize,
    out: *mut f64,
) -> ValenceStatus {
    guard(|| {
        let values = slice(ibi, len, "ibi")?;
        if target_length < len {
            return Err(Failure(
                ValenceStatus::InvalidArgument,
                format!("target length {target_length} is smaller than series length {len}"),
            ));
        }
        let prepared = prepare(values, target_length)?;
        slice_mut(out, target_length, "out")?.copy_from_slice(prepared.values());
        Ok(())
    })
}

/// Binary classify-or-abstain at threshold `alpha` with the boundary at 0.5.
/// `out_zone` receives 0 (low), 1 (high) or -1 (abstain); `out_mass` the
/// largest zone mass.
///
/// # Safety
/// `samples` must hold `n` values; outputs must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn valence_classify(
    samples: *const f64,
    n: usize,
    alpha: f64,
    out_zone: *mut i32,
    out_mass: *mut f64,
) -> ValenceStatus {
    guard(|| {
        let post = ValencePosterior::new(slice(samples, n, "samples")?.to_vec()).map_err(err(ValenceStatus::Posterior))?;
        let d = classify(&post, &ClassZones::binary(), alpha).map_err(err(ValenceStatus::Posterior))?;
        let zone = match d.outcome {
            Outcome::Class(z) => z as i32,
            Outcome::Abstain => -1,
        };
        write_out(out_zone, zone, "out_zone")?;
        write_out(out_mass, d.covered_fraction, "out_mass")
    })
}

/// Population variance of `n` posterior samples.
///
/// # Safety
/// `samples` must hold `n` values; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn valence_posterior_variance(samples: *const f64, n: usize, out: *mut f64) -> ValenceStatus {
    guard(|| {
        let post = ValencePosterior::new(slice(samples, n, "samples")?.to_vec()).map_err(err(ValenceStatus::Posterior))?;
        let v = posterior_variance(&post).map_err(err(ValenceStatus::Posterior))?;
        write_out(out, v, "out")
    })
}

/// Mann-Whitney U of `a` against `b` with its two-sided p-value (exact up to
/// 20 values in total, normal approximation above).
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` values; outputs must be valid for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn valence_mann_whitney_u(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out_u: *mut f64,
    out_p: *mut f64,
) -> ValenceStatus {
    guard(|| {
        let r = mann_whitney_u(slice(a, na, "a")?, slice(b, nb, "b")?).map_err(err(ValenceStatus::Statistics))?;
        write_out(out_u, r.u_a, "out_u")?;
        write_out(out_p, r.p_two_sided, "out_p")
    })
}
