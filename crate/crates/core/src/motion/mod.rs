//! Skeleton and motion data model plus the kinematic primitives shared by
//! the losses, the metrics and the data generator.

mod io;
mod skeleton;

pub use io::{read_motion, write_motion, MotionFile};
pub use skeleton::Skeleton;

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// `N x 3J` pose tensor at a fixed frame rate.
///
/// Joint 0's channels hold the global root translation, joints `1..J` hold
/// root-relative positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Mat,
    fps: f64,
}

impl MotionSequence {
    pub fn new(frames: Mat, fps: f64) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::InsufficientFrames { needed: 1, got: 0 });
        }
        if frames.cols() == 0 || frames.cols() % 3 != 0 {
            return Err(Error::dim(format!(
                "pose width {} is not a positive multiple of 3",
                frames.cols()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::param(format!("fps must be positive, got {fps}")));
        }
        if !frames.is_finite() {
            return Err(Error::Numerical {
                name: "motion frames".into(),
            });
        }
        Ok(MotionSequence { frames, fps })
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn into_frames(self) -> Mat {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.frames.cols() / 3
    }

    pub fn joint(&self, frame: usize, joint: usize) -> [f64; 3] {
        let r = self.frames.row(frame);
        [r[3 * joint], r[3 * joint + 1], r[3 * joint + 2]]
    }

    /// Copies frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::dim(format!(
                "frames {start}..{} out of range for {}",
                start + len,
                self.len()
            )));
        }
        MotionSequence::new(self.frames.slice_rows(start, len), self.fps)
    }
}

pub(crate) fn check_skeleton(frames: &Mat, skel: &Skeleton) -> Result<()> {
    if frames.cols() != skel.channels() {
        return Err(Error::dim(format!(
            "motion has {} channels, skeleton with {} joints needs {}",
            frames.cols(),
            skel.joint_count(),
            skel.channels()
        )));
    }
    Ok(())
}

/// Per-frame bone lengths, `N x (J-1)`. The root is the origin of bone
/// geometry, so root-translation channels never enter a length.
pub fn bone_lengths(motion: &MotionSequence, skel: &Skeleton) -> Result<Mat> {
    bone_lengths_raw(motion.frames(), skel)
}

pub(crate) fn bone_lengths_raw(frames: &Mat, skel: &Skeleton) -> Result<Mat> {
    check_skeleton(frames, skel)?;
    Ok(crate::tape::bone_lengths_of(frames, skel.bones()))
}

/// Mean joint speed per frame in m/s. Entry 0 repeats entry 1 so the
/// profile stays frame-aligned.
pub fn kinetic_velocity(motion: &MotionSequence) -> Result<Vec<f64>> {
    let n = motion.len();
    if n < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: n });
    }
    let j = motion.joint_count();
    let f = motion.frames();
    let mut vel = vec![0.0; n];
    for t in 1..n {
        let (cur, prev) = (f.row(t), f.row(t - 1));
        let mut total = 0.0;
        for joint in 0..j {
            let d2: f64 = (0..3)
                .map(|k| {
                    let d = cur[3 * joint + k] - prev[3 * joint + k];
                    d * d
                })
                .sum();
            total += d2.sqrt();
        }
        vel[t] = total / j as f64 * motion.fps();
    }
    vel[0] = vel[1];
    Ok(vel)
}

/// Strict interior local minima of a velocity profile ("stopping points").
pub fn kinematic_beats(velocity: &[f64]) -> Vec<usize> {
    if velocity.len() < 3 {
        return Vec::new();
    }
    (1..velocity.len() - 1)
        .filter(|&i| velocity[i] < velocity[i - 1] && velocity[i] < velocity[i + 1])
        .collect()
}
