//! End-to-end operations on a trained checkpoint: conditioning from raw
//! inputs, sampling, editing and evaluation against a dataset.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::conditioning::{mel_spectrogram, resample, Conditioning, MelConfig, Vocabulary, Waveform};
use crate::data::{motion_bas, Dataset};
use crate::diffusion::{NoiseSchedule, masked_sample, sample, ClampedPredictor, FrameMask, NoisePredictor};
use crate::error::{Error, Result};
use crate::metrics::{diversity, frechet_distance, kinetic_features, multi_modality, KineticFeature};
use crate::motion::MotionSequence;
use crate::nn::ConditioningConfig;
use crate::tensor::Mat;

/// Motion frame rate assumed for checkpoints that do not record one.
pub const DEFAULT_FPS: f64 = 20.0;

/// Raw conditioning input.
#[derive(Debug, Clone)]
pub enum ConditionSource {
    None,
    Audio(Waveform),
    Text(String),
}

pub fn checkpoint_fps(ck: &Checkpoint) -> f64 {
    ck.meta.fps.unwrap_or(DEFAULT_FPS)
}

pub fn checkpoint_mel(ck: &Checkpoint) -> MelConfig {
    ck.meta.mel.clone().unwrap_or_default()
}

/// Turns raw input into what the checkpoint's model consumes.
pub fn condition(ck: &Checkpoint, source: &ConditionSource) -> Result<Conditioning> {
    match (&ck.model.config().conditioning, source) {
        (_, ConditionSource::None) => Ok(Conditioning::None),
        (ConditioningConfig::Audio { .. }, ConditionSource::Audio(w)) => {
            let cfg = checkpoint_mel(ck);
            let w = resample(w, cfg.sample_rate)?;
            Ok(Conditioning::Audio(mel_spectrogram(&w, &cfg)?))
        }
        (ConditioningConfig::Text { .. }, ConditionSource::Text(text)) => {
            let tokens = ck
                .meta
                .vocabulary
                .clone()
                .ok_or_else(|| Error::Format("text checkpoint has no vocabulary".into()))?;
            Ok(Conditioning::Text(Vocabulary::from_list(tokens)?.encode(text)))
        }
        (cfg, src) => Err(Error::param(format!(
            "model conditioned on {cfg:?} cannot take {} input",
            match src {
                ConditionSource::Audio(_) => "audio",
                _ => "text",
            }
        ))),
    }
}

/// The checkpoint's model, clamped to its recorded motion range if any.
fn predictor<'a>(ck: &'a Checkpoint, sched: &'a NoiseSchedule) -> Box<dyn NoisePredictor + 'a> {
    match &ck.meta.range {
        Some(range) => Box::new(ClampedPredictor { inner: &ck.model, range, sched }),
        None => Box::new(&ck.model),
    }
}

/// Samples a `frames`-long motion. Deterministic in `seed`.
pub fn generate(ck: &Checkpoint, cond: &Conditioning, frames: usize, seed: u64) -> Result<MotionSequence> {
    let ctx = ck.model.context(cond)?;
    let sched = ck.schedule()?;
    let channels = ck.model.config().in_channels;
    let m = sample(&*predictor(ck, &sched), ctx.as_ref(), (frames, channels), &sched, seed)?;
    MotionSequence::new(m, checkpoint_fps(ck))
}

/// Mask specification as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSpec {
    /// Keep the first `S` frames.
    Prefix(usize),
    /// Keep the listed frames.
    Keyframes(Vec<usize>),
}

impl std::str::FromStr for MaskSpec {
    type Err = Error;

    /// `prefix:S` or `keyframes:i,j,...`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::param(format!("mask `{s}` is not prefix:S or keyframes:i,j,..."));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "prefix" => rest.trim().parse().map(MaskSpec::Prefix).map_err(|_| bad()),
            "keyframes" => rest
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(MaskSpec::Keyframes)
                .map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl MaskSpec {
    pub fn build(&self, len: usize) -> Result<FrameMask> {
        match self {
            MaskSpec::Prefix(s) => FrameMask::prefix(len, *s),
            MaskSpec::Keyframes(k) => FrameMask::keyframes(len, k),
        }
    }
}

/// Fills the unmasked frames of a `canvas`-long motion. Kept frames must
/// lie inside `seed_motion`, which may be shorter than the canvas.
pub fn edit(
    ck: &Checkpoint,
    cond: &Conditioning,
    seed_motion: &MotionSequence,
    mask: &MaskSpec,
    canvas: usize,
    seed: u64,
) -> Result<MotionSequence> {
    let mask = mask.build(canvas)?;
    let have = seed_motion.len();
    if let Some(last) = (0..canvas).rev().find(|&i| mask.is_kept(i)) {
        if last >= have {
            return Err(Error::InsufficientFrames { needed: last + 1, got: have });
        }
    }
    let c = seed_motion.frames().cols();
    let mut canvas_m = Mat::zeros(canvas, c);
    for i in 0..canvas.min(have) {
        canvas_m.row_mut(i).copy_from_slice(seed_motion.frames().row(i));
    }
    let ctx = ck.model.context(cond)?;
    let sched = ck.schedule()?;
    let m = masked_sample(&*predictor(ck, &sched), ctx.as_ref(), &canvas_m, &mask, &sched, seed)?;
    MotionSequence::new(m, seed_motion.fps())
}

/// Evaluation summary, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean beat alignment against each item's audio; absent without audio.
    pub bas: Option<f64>,
    pub fid: f64,
    pub diversity: f64,
    pub multimodality: Option<f64>,
    pub n_sequences: usize,
    pub config_hash: String,
}

impl EvalReport {
    pub fn to_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim()).map_err(|e| Error::Format(format!("report: {e}")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of everything that shapes a checkpoint's samples besides weights.
pub fn config_hash(ck: &Checkpoint) -> Result<String> {
    let v = serde_json::json!({
        "model": ck.model.config(),
        "schedule": ck.schedule,
        "meta": ck.meta,
    });
    Ok(sha256_hex(v.to_string().as_bytes()))
}

fn features(motions: &[MotionSequence]) -> Result<Vec<KineticFeature>> {
    motions.iter().map(kinetic_features).collect()
}

/// Scores `generated` (one motion per dataset item, same order) against
/// the dataset: BAS against each item's audio, FID against the dataset's
/// own motions, and diversity of the generated set.
pub fn evaluate_motions(
    data: &Dataset,
    generated: &[MotionSequence],
    mel: &MelConfig,
    config_hash: String,
) -> Result<EvalReport> {
    if generated.len() != data.items.len() {
        return Err(Error::dim(format!(
            "{} generated motions for {} dataset items",
            generated.len(),
            data.items.len()
        )));
    }
    if generated.len() < 2 {
        return Err(Error::UndefinedMetric("evaluation needs at least 2 sequences".into()));
    }
    let bas = if data.items.iter().all(|i| i.audio.is_some()) {
        let mut total = 0.0;
        for (item, m) in data.items.iter().zip(generated) {
            total += motion_bas(m, &data.mel(item, mel)?)?;
        }
        Some(total / generated.len() as f64)
    } else {
        None
    };
    let real: Vec<MotionSequence> = data.items.iter().map(|i| i.motion.clone()).collect();
    let gen_f = features(generated)?;
    Ok(EvalReport {
        bas,
        fid: frechet_distance(&gen_f, &features(&real)?)?,
        diversity: diversity(&gen_f)?,
        multimodality: None,
        n_sequences: generated.len(),
        config_hash,
    })
}

/// Input each dataset item offers a checkpoint of the given kind.
pub fn item_source(ck: &Checkpoint, data: &Dataset, index: usize) -> Result<ConditionSource> {
    let item = &data.items[index];
    Ok(match ck.model.config().conditioning {
        ConditioningConfig::None => ConditionSource::None,
        ConditioningConfig::Audio { .. } => ConditionSource::Audio(
            item.audio
                .clone()
                .ok_or_else(|| Error::Format(format!("{} has no audio", item.name)))?,
        ),
        ConditioningConfig::Text { .. } => ConditionSource::Text(
            item.caption
                .clone()
                .ok_or_else(|| Error::Format(format!("{} has no caption", item.name)))?,
        ),
    })
}

/// Samples one motion per dataset item (seed `seed + i`, same length and
/// conditioning as the item), scores them, and measures multi-modality
/// on the first item's conditioning with `mm_k` further seeds.
pub fn evaluate_checkpoint(ck: &Checkpoint, data: &Dataset, seed: u64, mm_k: usize) -> Result<EvalReport> {
    let mut generated = Vec::with_capacity(data.items.len());
    let mut first_cond = None;
    for (i, item) in data.items.iter().enumerate() {
        let cond = condition(ck, &item_source(ck, data, i)?)?;
        log::info!("eval: sampling {} ({} frames)", item.name, item.motion.len());
        generated.push(generate(ck, &cond, item.motion.len(), seed.wrapping_add(i as u64))?);
        first_cond.get_or_insert(cond);
    }
    let mut report = evaluate_motions(data, &generated, &checkpoint_mel(ck), config_hash(ck)?)?;
    if mm_k >= 2 {
        let cond = first_cond.expect("at least two items");
        let ctx = ck.model.context(&cond)?;
        let seeds: Vec<u64> = (0..mm_k as u64)
            .map(|k| seed.wrapping_add(data.items.len() as u64 + k))
            .collect();
        let shape = (data.items[0].motion.len(), ck.model.config().in_channels);
        report.multimodality = Some(multi_modality(
            &ck.model,
            ctx.as_ref(),
            shape,
            checkpoint_fps(ck),
            &ck.schedule()?,
            &seeds,
        )?);
    }
    Ok(report)
}
