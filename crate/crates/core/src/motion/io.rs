use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MotionSequence, Skeleton};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// On-disk motion document. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFile {
    pub fps: f64,
    pub joint_count: usize,
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub symmetry: Vec<usize>,
    pub frames: Vec<Vec<f64>>,
}

impl MotionFile {
    pub fn new(motion: &MotionSequence, skel: &Skeleton) -> Result<Self> {
        super::check_skeleton(motion.frames(), skel)?;
        Ok(MotionFile {
            fps: motion.fps(),
            joint_count: skel.joint_count(),
            joint_names: skel.joint_names().to_vec(),
            parents: skel.parents_signed(),
            symmetry: skel.symmetry().to_vec(),
            frames: (0..motion.len())
                .map(|n| motion.frames().row(n).to_vec())
                .collect(),
        })
    }

    pub fn into_parts(self) -> Result<(MotionSequence, Skeleton)> {
        let skel = Skeleton::new(self.joint_names, &self.parents, self.symmetry)?;
        if skel.joint_count() != self.joint_count {
            return Err(Error::Format(format!(
                "joint_count {} disagrees with {} parents",
                self.joint_count,
                skel.joint_count()
            )));
        }
        let frames = Mat::from_rows(&self.frames)?;
        let motion = MotionSequence::new(frames, self.fps)?;
        super::check_skeleton(motion.frames(), &skel)?;
        Ok((motion, skel))
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Compact JSON writer that prints every float with 17 significant digits
/// so values survive a text round trip bit-exactly.
pub(crate) struct PreciseFloats;

impl serde_json::ser::Formatter for PreciseFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{value:.8e}")
    }
}

pub(crate) fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFloats);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_motion(path: &Path, motion: &MotionSequence, skel: &Skeleton) -> Result<()> {
    let text = MotionFile::new(motion, skel)?.to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_motion(path: &Path) -> Result<(MotionSequence, Skeleton)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MotionFile::from_json(&text)?.into_parts()
}
