//! C ABI over the motion diffusion engine.
//!
//! Every fallible call returns a [`ModiffStatus`]; on failure the message
//! is available from [`modiff_last_error`] on the same thread until the
//! next failing call. Handles are opaque, created by the library and
//! released with the matching `_free` function. Motion data is row-major
//! `frames x channels` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use modiff::checkpoint::Checkpoint;
use modiff::conditioning::{read_wav, MelConfig};
use modiff::data::motion_bas;
use modiff::metrics::{beat_alignment_score, BeatSet};
use modiff::motion::{read_motion, write_motion, MotionSequence, Skeleton};
use modiff::pipeline::{checkpoint_mel, condition, edit, generate, ConditionSource, MaskSpec};
use modiff::{Error, Mat};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModiffStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    InsufficientFrames = 4,
    Parameter = 5,
    Numerical = 6,
    UndefinedMetric = 7,
    Format = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A loaded checkpoint: model weights, noise schedule and metadata.
pub struct ModiffCheckpoint {
    inner: Checkpoint,
}

/// A motion with its frame rate and, when known, its skeleton.
pub struct ModiffMotion {
    motion: MotionSequence,
    skeleton: Option<Skeleton>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ModiffStatus {
    match e {
        Error::Dimension(_) => ModiffStatus::Dimension,
        Error::InsufficientFrames { .. } => ModiffStatus::InsufficientFrames,
        Error::Parameter(_) => ModiffStatus::Parameter,
        Error::Numerical { .. } => ModiffStatus::Numerical,
        Error::UndefinedMetric(_) => ModiffStatus::UndefinedMetric,
        Error::Format(_) => ModiffStatus::Format,
        Error::Io { .. } => ModiffStatus::Io,
    }
}

struct Fail(ModiffStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ModiffStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ModiffStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            ModiffStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ModiffStatus::NullArgument, format!("`{what}` is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ModiffStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn modiff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn modiff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn modiff_checkpoint_load(
    path: *const c_char,
    out: *mut *mut ModiffCheckpoint,
) -> ModiffStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        put(out, ModiffCheckpoint { inner: Checkpoint::read(&path)? })
    })
}

/// # Safety
/// `ck` must come from [`modiff_checkpoint_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_checkpoint_free(ck: *mut ModiffCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Motion channels (3 per joint) the model produces; 0 for NULL.
///
/// # Safety
/// `ck` must be a live checkpoint handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_checkpoint_channels(ck: *const ModiffCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.inner.model.config().in_channels)
}

/// Motion frame rate the checkpoint was trained at; 0 for NULL.
///
/// # Safety
/// `ck` must be a live checkpoint handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_checkpoint_fps(ck: *const ModiffCheckpoint) -> f64 {
    ck.as_ref().map_or(0.0, |c| modiff::pipeline::checkpoint_fps(&c.inner))
}

unsafe fn source(audio_path: *const c_char, text: *const c_char) -> Result<ConditionSource, Fail> {
    match (audio_path.is_null(), text.is_null()) {
        (true, true) => Ok(ConditionSource::None),
        (false, true) => Ok(ConditionSource::Audio(read_wav(&PathBuf::from(str_arg(
            audio_path,
            "audio_path",
        )?))?)),
        (true, false) => Ok(ConditionSource::Text(str_arg(text, "text")?.to_string())),
        (false, false) => Err(Fail(
            ModiffStatus::Parameter,
            "pass at most one of audio_path and text".into(),
        )),
    }
}

/// Samples a `frames`-long motion. Conditioning is the WAV file at
/// `audio_path`, the caption `text`, or nothing when both are NULL.
///
/// # Safety
/// `ck` must be a live handle; strings NUL-terminated or NULL; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn modiff_sample(
    ck: *const ModiffCheckpoint,
    audio_path: *const c_char,
    text: *const c_char,
    frames: usize,
    seed: u64,
    out: *mut *mut ModiffMotion,
) -> ModiffStatus {
    guard(|| {
        let ck = &ref_arg(ck, "ck")?.inner;
        let cond = condition(ck, &source(audio_path, text)?)?;
        let motion = generate(ck, &cond, frames, seed)?;
        put(out, ModiffMotion { motion, skeleton: Some(ck.skeleton()?) })
    })
}

/// Mask kinds for [`modiff_edit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModiffMaskKind {
    /// Keep the first `values[0]` frames.
    Prefix = 0,
    /// Keep the frames listed in `values`.
    Keyframes = 1,
}

/// Completes a `canvas`-frame motion around the kept frames of `seed_motion`.
///
/// # Safety
/// Handles must be live; `values` must point to `count` entries;
/// strings NUL-terminated or NULL; `out` valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn modiff_edit(
    ck: *const ModiffCheckpoint,
    seed_motion: *const ModiffMotion,
    kind: ModiffMaskKind,
    values: *const usize,
    count: usize,
    canvas: usize,
    audio_path: *const c_char,
    text: *const c_char,
    seed: u64,
    out: *mut *mut ModiffMotion,
) -> ModiffStatus {
    guard(|| {
        let ck = &ref_arg(ck, "ck")?.inner;
        let seed_motion = ref_arg(seed_motion, "seed_motion")?;
        if values.is_null() && count > 0 {
            return Err(null("values"));
        }
        let vals: &[usize] = if count == 0 { &[] } else { std::slice::from_raw_parts(values, count) };
        let mask = match kind {
            ModiffMaskKind::Prefix => match vals {
                [s] => MaskSpec::Prefix(*s),
                _ => return Err(Fail(ModiffStatus::Parameter, "prefix mask takes one value".into())),
            },
            ModiffMaskKind::Keyframes => MaskSpec::Keyframes(vals.to_vec()),
        };
        let cond = condition(ck, &source(audio_path, text)?)?;
        let motion = edit(ck, &cond, &seed_motion.motion, &mask, canvas, seed)?;
        let skeleton = seed_motion.skeleton.clone().or(ck.skeleton().ok());
        put(out, ModiffMotion { motion, skeleton })
    })
}

/// Copies `frames * channels` row-major doubles into a new motion.
///
/// # Safety
/// `data` must point to `frames * channels` doubles; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_new(
    data: *const f64,
    frames: usize,
    channels: usize,
    fps: f64,
    out: *mut *mut ModiffMotion,
) -> ModiffStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = frames
            .checked_mul(channels)
            .ok_or_else(|| Fail(ModiffStatus::Dimension, "frames * channels overflows".into()))?;
        let m = Mat::from_vec(frames, channels, std::slice::from_raw_parts(data, len).to_vec())?;
        put(out, ModiffMotion { motion: MotionSequence::new(m, fps)?, skeleton: None })
    })
}

/// Reads a motion JSON file together with its skeleton.
///
/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_read(path: *const c_char, out: *mut *mut ModiffMotion) -> ModiffStatus {
    guard(|| {
        let (motion, skel) = read_motion(&PathBuf::from(str_arg(path, "path")?))?;
        put(out, ModiffMotion { motion, skeleton: Some(skel) })
    })
}

/// Writes a motion JSON file. Motions built from raw data need a known
/// skeleton; one with the matching channel count is looked up by preset.
///
/// # Safety
/// `motion` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_write(motion: *const ModiffMotion, path: *const c_char) -> ModiffStatus {
    guard(|| {
        let m = ref_arg(motion, "motion")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let skel = match &m.skeleton {
            Some(s) => s.clone(),
            None => ["toy8", "body24"]
                .iter()
                .filter_map(|n| Skeleton::preset(n).ok())
                .find(|s| s.channels() == m.motion.frames().cols())
                .ok_or_else(|| Fail(ModiffStatus::Dimension, "no skeleton matches the channel count".into()))?,
        };
        write_motion(&path, &m.motion, &skel)?;
        Ok(())
    })
}

/// # Safety
/// `motion` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_free(motion: *mut ModiffMotion) {
    if !motion.is_null() {
        drop(Box::from_raw(motion));
    }
}

/// # Safety
/// `motion` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_frames(motion: *const ModiffMotion) -> usize {
    motion.as_ref().map_or(0, |m| m.motion.len())
}

/// # Safety
/// `motion` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_channels(motion: *const ModiffMotion) -> usize {
    motion.as_ref().map_or(0, |m| m.motion.frames().cols())
}

/// # Safety
/// `motion` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_fps(motion: *const ModiffMotion) -> f64 {
    motion.as_ref().map_or(0.0, |m| m.motion.fps())
}

/// Copies the row-major frames into `buf`, which holds `len` doubles.
///
/// # Safety
/// `motion` must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_copy(motion: *const ModiffMotion, buf: *mut f64, len: usize) -> ModiffStatus {
    guard(|| {
        let data = ref_arg(motion, "motion")?.motion.frames().data();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < data.len() {
            return Err(Fail(
                ModiffStatus::BufferTooSmall,
                format!("buffer holds {len} values, motion has {}", data.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Beat alignment score of kinematic beat frames against music beat
/// frames, with Gaussian width `sigma` in frames.
///
/// # Safety
/// `music` and `kinematic` must point to the given counts of frame indices.
#[no_mangle]
pub unsafe extern "C" fn modiff_beat_alignment(
    music: *const usize,
    music_count: usize,
    kinematic: *const usize,
    kinematic_count: usize,
    sigma: f64,
    out: *mut f64,
) -> ModiffStatus {
    guard(|| {
        let slice = |p: *const usize, n: usize, what: &str| -> Result<Vec<usize>, Fail> {
            match (p.is_null(), n) {
                (_, 0) => Ok(Vec::new()),
                (true, _) => Err(null(what)),
                (false, n) => Ok(std::slice::from_raw_parts(p, n).to_vec()),
            }
        };
        let music = BeatSet::new(slice(music, music_count, "music")?, 1.0)?;
        let kin = BeatSet::new(slice(kinematic, kinematic_count, "kinematic")?, 1.0)?;
        let score = beat_alignment_score(&music, &kin, sigma)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = score;
        Ok(())
    })
}

/// Beat alignment of a motion against the onsets of a WAV file, using the
/// checkpoint's Mel settings when `ck` is given and the defaults otherwise.
///
/// # Safety
/// `motion` live; `ck` live or NULL; `audio_path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn modiff_motion_bas(
    motion: *const ModiffMotion,
    ck: *const ModiffCheckpoint,
    audio_path: *const c_char,
    out: *mut f64,
) -> ModiffStatus {
    guard(|| {
        let m = ref_arg(motion, "motion")?;
        let cfg = ck.as_ref().map_or_else(MelConfig::default, |c| checkpoint_mel(&c.inner));
        let w = read_wav(&PathBuf::from(str_arg(audio_path, "audio_path")?))?;
        let w = modiff::conditioning::resample(&w, cfg.sample_rate)?;
        let mel = modiff::conditioning::mel_spectrogram(&w, &cfg)?;
        let score = motion_bas(&m.motion, &mel)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = score;
        Ok(())
    })
}
