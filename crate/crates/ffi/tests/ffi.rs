use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use modiff::checkpoint::{Checkpoint, CheckpointMeta, SkeletonSpec};
use modiff::diffusion::NoiseSchedule;
use modiff::motion::Skeleton;
use modiff::nn::{ConditioningConfig, DenoiserModel, ModelConfig};
use modiff_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = modiff_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// An untrained unconditional toy checkpoint on disk.
fn write_checkpoint(dir: &Path) -> CString {
    let skel = Skeleton::toy8();
    let cfg = ModelConfig {
        in_channels: skel.channels(),
        base_channels: 4,
        channel_mults: vec![1],
        heads: 1,
        attn_dim: 4,
        context_dim: 4,
        time_dim: 4,
        groups: 2,
        ff_mult: 1,
        conditioning: ConditioningConfig::None,
    };
    let meta = CheckpointMeta {
        fps: Some(20.0),
        skeleton: Some(SkeletonSpec::of(&skel)),
        ..CheckpointMeta::default()
    };
    let model = DenoiserModel::new(cfg, 1).unwrap();
    let path = dir.join("toy.ckpt");
    Checkpoint::new(model, &NoiseSchedule::standard(), None, 0, meta).write(&path).unwrap();
    cstr(&path)
}

unsafe fn frames_of(m: *const ModiffMotion) -> Vec<f64> {
    let mut buf = vec![0.0; modiff_motion_frames(m) * modiff_motion_channels(m)];
    assert_eq!(modiff_motion_copy(m, buf.as_mut_ptr(), buf.len()), ModiffStatus::Ok);
    buf
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(modiff_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(modiff_checkpoint_load(ptr::null(), &mut out), ModiffStatus::NullArgument);
        assert!(last_error().contains("path"));
        assert!(out.is_null());
        assert_eq!(
            modiff_sample(ptr::null(), ptr::null(), ptr::null(), 4, 0, &mut ptr::null_mut()),
            ModiffStatus::NullArgument
        );
        assert_eq!(modiff_checkpoint_channels(ptr::null()), 0);
        modiff_checkpoint_free(ptr::null_mut());
        modiff_motion_free(ptr::null_mut());
    }
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("nope.ckpt"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { modiff_checkpoint_load(path.as_ptr(), &mut out) }, ModiffStatus::Io);
    assert!(last_error().contains("nope.ckpt"));
}

#[test]
fn motion_buffers_round_trip() {
    let data: Vec<f64> = (0..48).map(|i| i as f64 * 0.5).collect();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(modiff_motion_new(data.as_ptr(), 2, 24, 30.0, &mut m), ModiffStatus::Ok);
        assert_eq!((modiff_motion_frames(m), modiff_motion_channels(m)), (2, 24));
        assert_eq!(modiff_motion_fps(m), 30.0);
        assert_eq!(frames_of(m), data);
        let mut small = [0.0; 10];
        assert_eq!(modiff_motion_copy(m, small.as_mut_ptr(), 10), ModiffStatus::BufferTooSmall);

        let dir = tempfile::tempdir().unwrap();
        let path = cstr(&dir.path().join("m.json"));
        assert_eq!(modiff_motion_write(m, path.as_ptr()), ModiffStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(modiff_motion_read(path.as_ptr(), &mut back), ModiffStatus::Ok);
        assert_eq!(frames_of(back), data);
        modiff_motion_free(back);
        modiff_motion_free(m);

        let mut bad = ptr::null_mut();
        assert_eq!(modiff_motion_new(data.as_ptr(), 2, 5, 30.0, &mut bad), ModiffStatus::Dimension);
    }
}

#[test]
fn beat_alignment_oracles() {
    let music = [10usize, 20, 30];
    let shifted = [13usize, 23, 33];
    let mut score = 0.0;
    unsafe {
        assert_eq!(
            modiff_beat_alignment(music.as_ptr(), 3, music.as_ptr(), 3, 3.0, &mut score),
            ModiffStatus::Ok
        );
        assert_eq!(score, 1.0);
        assert_eq!(
            modiff_beat_alignment(music.as_ptr(), 3, shifted.as_ptr(), 3, 3.0, &mut score),
            ModiffStatus::Ok
        );
        assert!((score - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(
            modiff_beat_alignment(ptr::null(), 0, shifted.as_ptr(), 3, 3.0, &mut score),
            ModiffStatus::UndefinedMetric
        );
        assert_eq!(
            modiff_beat_alignment(shifted.as_ptr(), 3, music.as_ptr(), 3, 0.0, &mut score),
            ModiffStatus::Parameter
        );
    }
}

#[test]
fn sample_and_edit_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_checkpoint(dir.path());
    unsafe {
        let mut ck = ptr::null_mut();
        assert_eq!(modiff_checkpoint_load(path.as_ptr(), &mut ck), ModiffStatus::Ok);
        assert_eq!(modiff_checkpoint_channels(ck), 24);
        assert_eq!(modiff_checkpoint_fps(ck), 20.0);

        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(modiff_sample(ck, ptr::null(), ptr::null(), 12, 7, &mut a), ModiffStatus::Ok);
        assert_eq!(modiff_sample(ck, ptr::null(), ptr::null(), 12, 7, &mut b), ModiffStatus::Ok);
        assert_eq!(frames_of(a), frames_of(b));
        assert_eq!(modiff_motion_frames(a), 12);

        let text = CString::new("a figure waves").unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(modiff_sample(ck, ptr::null(), text.as_ptr(), 12, 7, &mut c), ModiffStatus::Parameter);
        assert!(last_error().contains("cannot take text"));

        let prefix = [5usize];
        let mut edited = ptr::null_mut();
        let status = modiff_edit(
            ck, a, ModiffMaskKind::Prefix, prefix.as_ptr(), 1, 20, ptr::null(), ptr::null(), 3, &mut edited,
        );
        assert_eq!(status, ModiffStatus::Ok);
        assert_eq!(modiff_motion_frames(edited), 20);
        let (src, out) = (frames_of(a), frames_of(edited));
        assert_eq!(src[..5 * 24], out[..5 * 24]);

        let keys = [0usize, 11, 15];
        let status = modiff_edit(
            ck, a, ModiffMaskKind::Keyframes, keys.as_ptr(), 3, 20, ptr::null(), ptr::null(), 3, &mut edited,
        );
        assert_eq!(status, ModiffStatus::InsufficientFrames);

        modiff_motion_free(edited);
        modiff_motion_free(a);
        modiff_motion_free(b);
        modiff_checkpoint_free(ck);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/modiff.h")).unwrap();
    for name in [
        "MODIFF_H",
        "typedef struct ModiffCheckpoint ModiffCheckpoint",
        "typedef struct ModiffMotion ModiffMotion",
        "MODIFF_STATUS_OK = 0",
        "MODIFF_STATUS_PANIC",
        "modiff_checkpoint_load",
        "modiff_sample",
        "modiff_edit",
        "modiff_motion_copy",
        "modiff_beat_alignment",
        "modiff_last_error",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
}
