//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `MODIFFCK`, a little-endian `u32` version, a
//! little-endian `u64` header length, the UTF-8 JSON header, then every
//! tensor payload back to back in header order, row-major little-endian.
//! The header records hyperparameters, schedule constants, the step count,
//! run metadata and one `{group, name, rows, cols}` entry per tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::MelConfig;
use crate::diffusion::{MotionRange, NoiseSchedule};
use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::nn::{DenoiserModel, ModelConfig, ParamStore};
use crate::tensor::Mat;
use crate::trainer::{AdamState, TrainConfig};

pub const MAGIC: &[u8; 8] = b"MODIFFCK";
pub const VERSION: u32 = 1;

/// Payload precision. `F64` is the default and makes resumption exact;
/// `F32` halves the file for export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Linear schedule constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    pub fn of(sched: &NoiseSchedule) -> Self {
        let b = sched.beta();
        ScheduleSpec {
            steps: b.len(),
            beta_start: b[0],
            beta_end: b[b.len() - 1],
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Skeleton description stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub symmetry: Vec<usize>,
}

impl SkeletonSpec {
    pub fn of(skel: &Skeleton) -> Self {
        SkeletonSpec {
            joint_names: skel.joint_names().to_vec(),
            parents: skel.parents_signed(),
            symmetry: skel.symmetry().to_vec(),
        }
    }

    pub fn build(&self) -> Result<Skeleton> {
        Skeleton::new(self.joint_names.clone(), &self.parents, self.symmetry.clone())
    }
}

/// Everything besides tensors needed to use a checkpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub fps: Option<f64>,
    pub skeleton: Option<SkeletonSpec>,
    pub mel: Option<MelConfig>,
    /// Tokens in id order.
    pub vocabulary: Option<Vec<String>>,
    pub train: Option<TrainConfig>,
    /// Clean-motion bounds applied while sampling; `None` samples unclamped.
    #[serde(default)]
    pub range: Option<MotionRange>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: Dtype,
    model: ModelConfig,
    schedule: ScheduleSpec,
    step: u64,
    adam_t: Option<u64>,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

const PARAM: &str = "param";
const ADAM_M: &str = "adam_m";
const ADAM_V: &str = "adam_v";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub schedule: ScheduleSpec,
    pub optimizer: Option<AdamState>,
    /// Completed optimizer steps.
    pub step: u64,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(
        model: DenoiserModel,
        sched: &NoiseSchedule,
        optimizer: Option<AdamState>,
        step: u64,
        meta: CheckpointMeta,
    ) -> Self {
        Checkpoint {
            model,
            schedule: ScheduleSpec::of(sched),
            optimizer,
            step,
            meta,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_bytes_as(Dtype::F64)
    }

    pub fn to_bytes_as(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let mut groups: Vec<(&str, &ParamStore)> = vec![(PARAM, self.model.params())];
        if let Some(opt) = &self.optimizer {
            groups.push((ADAM_M, &opt.m));
            groups.push((ADAM_V, &opt.v));
        }
        let tensors = groups
            .iter()
            .flat_map(|(g, store)| {
                store.iter().map(move |(name, m)| TensorEntry {
                    group: g.to_string(),
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
            })
            .collect();
        let header = Header {
            dtype,
            model: self.model.config().clone(),
            schedule: self.schedule,
            step: self.step,
            adam_t: self.optimizer.as_ref().map(|o| o.t),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, store) in &groups {
            for (_, m) in store.iter() {
                for &v in m.data() {
                    match dtype {
                        Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                        Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let width = header.dtype.width();
        let mut pos = 20 + hlen;
        let mut stores = [ParamStore::new(), ParamStore::new(), ParamStore::new()];
        for e in &header.tensors {
            let n = e.rows * e.cols;
            let raw = bytes
                .get(pos..pos + n * width)
                .ok_or_else(|| bad(&format!("truncated payload for `{}`", e.name)))?;
            pos += n * width;
            let data: Vec<f64> = raw
                .chunks_exact(width)
                .map(|c| match header.dtype {
                    Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                    Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                })
                .collect();
            let slot = match e.group.as_str() {
                PARAM => 0,
                ADAM_M => 1,
                ADAM_V => 2,
                other => return Err(bad(&format!("unknown tensor group `{other}`"))),
            };
            if stores[slot].get(&e.name).is_some() {
                return Err(bad(&format!("duplicate tensor `{}`", e.name)));
            }
            stores[slot].insert(e.name.clone(), Mat::from_vec(e.rows, e.cols, data)?);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        let [params, m, v] = stores;
        let optimizer = match header.adam_t {
            Some(t) => {
                for (name, p) in params.iter() {
                    for (what, s) in [("first", &m), ("second", &v)] {
                        if s.get(name).map(Mat::shape) != Some(p.shape()) {
                            return Err(bad(&format!("{what} moment of `{name}` missing or misshapen")));
                        }
                    }
                }
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(bad("optimizer state names do not match parameters"));
                }
                Some(AdamState { m, v, t })
            }
            None => None,
        };
        header.schedule.build()?;
        Ok(Checkpoint {
            model: DenoiserModel::from_parts(header.model, params)?,
            schedule: header.schedule,
            optimizer,
            step: header.step,
            meta: header.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_as(path, Dtype::F64)
    }

    /// Writes atomically via a sibling temporary file.
    pub fn write_as(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let bytes = self.to_bytes_as(dtype)?;
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        match &self.meta.skeleton {
            Some(s) => s.build(),
            None => Ok(Skeleton::toy8()),
        }
    }
}
