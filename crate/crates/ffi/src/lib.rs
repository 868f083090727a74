//! C ABI over `sabr-core`.
//!
//! Every function returns a [`SabrStatus`]; on failure the message is kept
//! per thread and read back with [`sabr_last_error_message`]. Objects are
//! opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sabr_core::cli::SabrConfig;
use sabr_core::eval::{evaluate, sample_record, EvalConfig, MotionFile};
use sabr_core::geometry::{BodySpec, CameraIntrinsics};
use sabr_core::train::{samples_from_dataset, train_loop, Checkpoint, TrainRun};
use sabr_core::world::{gen_dataset, read_dataset, write_dataset, Dataset, Split};
use sabr_core::SabrError;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SabrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Contract = 4,
    Dimension = 5,
    Numeric = 6,
    Geometry = 7,
    Generation = 8,
    Format = 9,
    Integrity = 10,
    Io = 11,
    Index = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

impl From<&SabrError> for SabrStatus {
    fn from(e: &SabrError) -> Self {
        match e {
            SabrError::Config(_) | SabrError::Json(_) => SabrStatus::Config,
            SabrError::Contract(_) | SabrError::Capacity(_) => SabrStatus::Contract,
            SabrError::Dimension(_) => SabrStatus::Dimension,
            SabrError::Numeric(_) | SabrError::NumericInput(_) => SabrStatus::Numeric,
            SabrError::Geometry(_)
            | SabrError::BehindCamera { .. }
            | SabrError::DegenerateBox(_)
            | SabrError::DegenerateRotation(_) => SabrStatus::Geometry,
            SabrError::Generation(_) => SabrStatus::Generation,
            SabrError::Format { .. } => SabrStatus::Format,
            SabrError::Integrity { .. } => SabrStatus::Integrity,
            SabrError::Io { .. } => SabrStatus::Io,
            SabrError::Index(_) => SabrStatus::Index,
        }
    }
}

/// A generated or loaded dataset.
pub struct SabrDataset(Dataset);

/// Trained weights with optimizer and EMA state.
pub struct SabrCheckpoint(Checkpoint);

/// One sampled motion [frames × dim].
pub struct SabrMotion(MotionFile);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SabrStatus, String);

impl From<SabrError> for Failure {
    fn from(e: SabrError) -> Self {
        Failure(SabrStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SabrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SabrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SabrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SabrStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SabrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SabrStatus::NullArgument, format!("{what} is null")))
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(
            SabrStatus::NullArgument,
            "output pointer is null".into(),
        ));
    }
    Ok(())
}

fn config(json: Option<&str>) -> Result<SabrConfig, Failure> {
    match json {
        None => Ok(SabrConfig::default()),
        Some(s) => serde_json::from_str(s)
            .map_err(|e| Failure(SabrStatus::Config, format!("configuration: {e}"))),
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sabr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sabr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates `count` records with `seed`. `config_json` holds the CLI
/// configuration schema and may be null for the defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_dataset_generate(
    config_json: *const c_char,
    seed: u64,
    count: usize,
    out: *mut *mut SabrDataset,
) -> SabrStatus {
    guard(|| {
        out_ptr(out)?;
        let cfg = config(optional_text(config_json, "config_json")?)?;
        let ds = gen_dataset(
            &cfg.world,
            &BodySpec::climber(),
            &CameraIntrinsics::default(),
            seed,
            count,
        )?;
        *out = Box::into_raw(Box::new(SabrDataset(ds)));
        Ok(())
    })
}

/// Reads and verifies a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_dataset_open(
    dir: *const c_char,
    out: *mut *mut SabrDataset,
) -> SabrStatus {
    guard(|| {
        out_ptr(out)?;
        let ds = read_dataset(&PathBuf::from(text(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(SabrDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sabr_dataset_write(
    ds: *const SabrDataset,
    dir: *const c_char,
) -> SabrStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        write_dataset(&ds.0, &PathBuf::from(text(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_dataset_len(ds: *const SabrDataset, out: *mut usize) -> SabrStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let out = out
            .as_mut()
            .ok_or_else(|| Failure(SabrStatus::NullArgument, "output pointer is null".into()))?;
        *out = ds.0.records.len();
        Ok(())
    })
}

/// Frame count of record `index`.
///
/// # Safety
/// `ds` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_dataset_record_frames(
    ds: *const SabrDataset,
    index: usize,
    out: *mut usize,
) -> SabrStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let out = out
            .as_mut()
            .ok_or_else(|| Failure(SabrStatus::NullArgument, "output pointer is null".into()))?;
        let r =
            ds.0.records.get(index).ok_or_else(|| {
                SabrError::Index(format!("record {index} of {}", ds.0.records.len()))
            })?;
        *out = r.frames();
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sabr_dataset_free(ds: *mut SabrDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains on the training split. `out_dir` may be null to keep everything in
/// memory; otherwise checkpoints and the loss log go there.
///
/// # Safety
/// `ds` must come from this library; strings must be null or NUL-terminated;
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_train(
    ds: *const SabrDataset,
    config_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut SabrCheckpoint,
) -> SabrStatus {
    guard(|| {
        out_ptr(out)?;
        let ds = &handle(ds, "dataset")?.0;
        let cfg = config(optional_text(config_json, "config_json")?)?;
        let dir = optional_text(out_dir, "out_dir")?.map(PathBuf::from);
        let model = cfg.model.build(&ds.manifest.config, &ds.manifest.body)?;
        let samples = samples_from_dataset(ds, &ds.split(Split::Train))?;
        let train = sabr_core::train::TrainConfig {
            schedule: cfg.schedule,
            ..cfg.train.clone()
        };
        let run = TrainRun {
            model,
            train,
            manifest_hash: ds.manifest.hash()?,
            out_dir: dir.as_deref(),
            resume: None,
            halt_at: None,
        };
        let ck = train_loop(&samples, run, |_, _| {})?;
        *out = Box::into_raw(Box::new(SabrCheckpoint(ck)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_checkpoint_load(
    path: *const c_char,
    out: *mut *mut SabrCheckpoint,
) -> SabrStatus {
    guard(|| {
        out_ptr(out)?;
        let ck = Checkpoint::load(&PathBuf::from(text(path, "path")?), None)?;
        *out = Box::into_raw(Box::new(SabrCheckpoint(ck)));
        Ok(())
    })
}

/// # Safety
/// `ck` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sabr_checkpoint_save(
    ck: *const SabrCheckpoint,
    path: *const c_char,
) -> SabrStatus {
    guard(|| {
        let ck = handle(ck, "checkpoint")?;
        ck.0.save(&PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Optimizer steps the checkpoint has completed.
///
/// # Safety
/// `ck` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_checkpoint_step(
    ck: *const SabrCheckpoint,
    out: *mut u64,
) -> SabrStatus {
    guard(|| {
        let ck = handle(ck, "checkpoint")?;
        let out = out
            .as_mut()
            .ok_or_else(|| Failure(SabrStatus::NullArgument, "output pointer is null".into()))?;
        *out = ck.0.step;
        Ok(())
    })
}

/// # Safety
/// `ck` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sabr_checkpoint_free(ck: *mut SabrCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Samples record `record` with the EMA weights over `steps` respaced steps.
///
/// # Safety
/// Handles must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_sample(
    ck: *const SabrCheckpoint,
    ds: *const SabrDataset,
    record: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut SabrMotion,
) -> SabrStatus {
    guard(|| {
        out_ptr(out)?;
        let (ck, ds) = (handle(ck, "checkpoint")?, handle(ds, "dataset")?);
        let m = sample_record(&ck.0, &ds.0, record, steps, seed, None)?;
        *out = Box::into_raw(Box::new(SabrMotion(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library; `frames` and `dim` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_motion_shape(
    m: *const SabrMotion,
    frames: *mut usize,
    dim: *mut usize,
) -> SabrStatus {
    guard(|| {
        let m = handle(m, "motion")?;
        if frames.is_null() || dim.is_null() {
            return Err(Failure(
                SabrStatus::NullArgument,
                "output pointer is null".into(),
            ));
        }
        *frames = m.0.header.frames;
        *dim = m.0.header.dim;
        Ok(())
    })
}

/// Copies the row-major motion into `buf`, which must hold frames × dim
/// values.
///
/// # Safety
/// `m` must come from this library; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_motion_copy(
    m: *const SabrMotion,
    buf: *mut f64,
    len: usize,
) -> SabrStatus {
    guard(|| {
        let m = handle(m, "motion")?;
        if buf.is_null() {
            return Err(Failure(SabrStatus::NullArgument, "buffer is null".into()));
        }
        let data = m.0.motion.data();
        if len < data.len() {
            return Err(Failure(
                SabrStatus::BufferTooSmall,
                format!("buffer holds {len} values, motion has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sabr_motion_save(m: *const SabrMotion, path: *const c_char) -> SabrStatus {
    guard(|| {
        let m = handle(m, "motion")?;
        m.0.save(&PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sabr_motion_free(m: *mut SabrMotion) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Evaluates the held-out split (every record when it is empty) and returns
/// the metrics report as JSON, to be released with [`sabr_string_free`].
/// `eval_json` may be null for the default evaluation settings.
///
/// # Safety
/// Handles must come from this library; `eval_json` must be null or
/// NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sabr_evaluate(
    ck: *const SabrCheckpoint,
    ds: *const SabrDataset,
    eval_json: *const c_char,
    out: *mut *mut c_char,
) -> SabrStatus {
    guard(|| {
        out_ptr(out)?;
        let (ck, ds) = (handle(ck, "checkpoint")?, handle(ds, "dataset")?);
        let cfg: EvalConfig = match optional_text(eval_json, "eval_json")? {
            Some(s) => serde_json::from_str(s)
                .map_err(|e| Failure(SabrStatus::Config, format!("evaluation config: {e}")))?,
            None => EvalConfig::default(),
        };
        let mut idx = ds.0.split(Split::Heldout);
        if idx.is_empty() {
            idx = (0..ds.0.records.len()).collect();
        }
        let report = evaluate(&ck.0, &ds.0, &idx, &cfg)?;
        let json = serde_json::to_string(&report).map_err(SabrError::from)?;
        *out = CString::new(json)
            .map_err(|_| Failure(SabrStatus::Format, "report contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sabr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
