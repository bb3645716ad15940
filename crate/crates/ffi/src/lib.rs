//! C interface to the ILD classifier.
//!
//! Every function returns an [`IldvitStatus`]. On failure a description is
//! kept per thread and can be fetched with [`ildvit_last_error_message`].
//! Models are opaque handles created by a loader and released with
//! [`ildvit_model_free`]. A handle may be shared by threads for concurrent
//! classification because classification never mutates it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ildvit_core::dsp::{Label, RawRecording, PIPELINE_SAMPLE_RATE};
use ildvit_core::experiment::classify_recording;
use ildvit_core::io::{read_wav, RunConfig};
use ildvit_core::model::{count_parameters, init_params, load_checkpoint, ModelConfig, ModelParams};
use ildvit_core::pipeline::{FeatureConfig, Featurizer};
use ildvit_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IldvitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    WavFormat = 4,
    Checkpoint = 5,
    Config = 6,
    Empty = 7,
    Internal = 8,
    Panic = 9,
}

/// Classification of one recording. `label` is 0 for Healthy and 1 for
/// ILD. Each class probability is an independent sigmoid output averaged
/// over the classified segments, so the two need not sum to one.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IldvitPrediction {
    pub label: u32,
    pub p_healthy: f64,
    pub p_ild: f64,
    pub segments: u32,
    pub skipped_segments: u32,
}

/// Opaque model handle.
pub struct IldvitModel {
    params: ModelParams,
    featurizer: Featurizer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IldvitStatus {
    match e {
        Error::Io { .. } => IldvitStatus::Io,
        Error::WavFormat(_) | Error::SampleRate(_) => IldvitStatus::WavFormat,
        Error::Checkpoint(_) => IldvitStatus::Checkpoint,
        Error::Config(_) | Error::Manifest(_) => IldvitStatus::Config,
        Error::Empty(_) => IldvitStatus::Empty,
        Error::InvalidParameter(_) | Error::DegenerateSegment(_) => IldvitStatus::InvalidArgument,
        _ => IldvitStatus::Internal,
    }
}

struct Failure(IldvitStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IldvitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IldvitStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IldvitStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(IldvitStatus::NullArgument, format!("{name} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(IldvitStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(Path::new(s))
}

fn into_handle(model: IldvitModel, out: *mut *mut IldvitModel) {
    unsafe { *out = Box::into_raw(Box::new(model)) };
}

/// Loads a checkpoint written by the `ildvit train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ildvit_model_load(
    path: *const c_char,
    out: *mut *mut IldvitModel,
) -> IldvitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path, "path") }?;
        let (params, meta) = load_checkpoint(path)?;
        let features = match meta.get("run_config") {
            Some(text) => RunConfig::parse(text)?.features,
            None => FeatureConfig::default(),
        };
        let featurizer = Featurizer::new(features)?;
        into_handle(IldvitModel { params, featurizer }, out);
        Ok(())
    })
}

/// Randomly initialized model with `n_blocks` transformer blocks and
/// otherwise default settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ildvit_model_init_random(
    n_blocks: u32,
    seed: u64,
    out: *mut *mut IldvitModel,
) -> IldvitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ModelConfig {
            n_blocks: n_blocks as usize,
            ..Default::default()
        };
        let params = init_params(&config, seed)?;
        let featurizer = Featurizer::new(FeatureConfig::default())?;
        into_handle(IldvitModel { params, featurizer }, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from a loader of this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ildvit_model_free(model: *mut IldvitModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Trainable parameter count of a loaded model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ildvit_model_parameter_count(
    model: *const IldvitModel,
    out: *mut u64,
) -> IldvitStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = model.params.count() as u64 };
        Ok(())
    })
}

/// Parameter count of the default architecture with `n_blocks` blocks.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ildvit_parameter_count(n_blocks: u32, out: *mut u64) -> IldvitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ModelConfig {
            n_blocks: n_blocks as usize,
            ..Default::default()
        };
        unsafe { *out = count_parameters(&config)?.total as u64 };
        Ok(())
    })
}

fn predict(model: &IldvitModel, rec: &RawRecording, out: *mut IldvitPrediction) -> Result<(), Failure> {
    let p = classify_recording(&model.params, &model.featurizer, rec)?;
    unsafe {
        *out = IldvitPrediction {
            label: match p.label {
                Label::Healthy => 0,
                Label::Ild => 1,
            },
            p_healthy: p.mean_probs[0],
            p_ild: p.mean_probs[1],
            segments: p.segments.len() as u32,
            skipped_segments: p.skipped.len() as u32,
        };
    }
    Ok(())
}

/// Classifies `len` samples in `[-1, 1]` recorded at 4000 Hz.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `model` must be a live
/// handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ildvit_classify_samples(
    model: *const IldvitModel,
    samples: *const f64,
    len: usize,
    out: *mut IldvitPrediction,
) -> IldvitStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let data = unsafe { std::slice::from_raw_parts(samples, len) }.to_vec();
        let rec = RawRecording::new(data, PIPELINE_SAMPLE_RATE, "ffi", "ffi", None)?;
        predict(model, &rec, out)
    })
}

/// Classifies a 16-bit mono 4000 Hz WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `model` must be a live handle
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ildvit_classify_wav(
    model: *const IldvitModel,
    path: *const c_char,
    out: *mut IldvitPrediction,
) -> IldvitStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let path = unsafe { path_arg(path, "path") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rec = read_wav(path, "ffi", "ffi", None)?;
        predict(model, &rec, out)
    })
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `cap > 0`). Returns the full message length
/// including the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be writable for `cap` bytes, or null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn ildvit_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn ildvit_status_name(status: IldvitStatus) -> *const c_char {
    let s: &'static CStr = match status {
        IldvitStatus::Ok => c"ok",
        IldvitStatus::NullArgument => c"null_argument",
        IldvitStatus::InvalidArgument => c"invalid_argument",
        IldvitStatus::Io => c"io",
        IldvitStatus::WavFormat => c"wav_format",
        IldvitStatus::Checkpoint => c"checkpoint",
        IldvitStatus::Config => c"config",
        IldvitStatus::Empty => c"empty",
        IldvitStatus::Internal => c"internal",
        IldvitStatus::Panic => c"panic",
    };
    s.as_ptr()
}
