//! Synthetic beat-synchronised dance data and dataset loading.
//!
//! Each generated sequence swings one limb back and forth once per beat
//! with a `sin^2` speed profile, so the mean joint speed stops exactly on
//! every beat. The paired click track puts an onset on the same beats.
//! Limbs move by rigid rotations about their parent joints, so bone
//! lengths are constant and left/right lengths stay mirrored.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::SkeletonSpec;
use crate::conditioning::{
    mel_spectrogram, read_wav, resample, write_wav, Conditioning, MelConfig, MelSpectrogram,
    Vocabulary, Waveform,
};
use crate::error::{Error, Result};
use crate::metrics::{beat_alignment_score, music_beats, BeatSet, BAS_SIGMA};
use crate::motion::{read_motion, write_motion, MotionSequence, Skeleton};
use crate::tensor::Mat;
use crate::trainer::{Task, TrainSample};

pub const MANIFEST: &str = "manifest.json";
pub const AUDIO_RATE: u32 = 16000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionFamily {
    Waves,
    Steps,
    Bends,
}

impl MotionFamily {
    const ALL: [MotionFamily; 3] = [MotionFamily::Waves, MotionFamily::Steps, MotionFamily::Bends];

    fn verb(self) -> &'static str {
        match self {
            MotionFamily::Waves => "waves",
            MotionFamily::Steps => "steps",
            MotionFamily::Bends => "bends",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Synthetic dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_sequences: usize,
    pub seconds: f64,
    pub fps: f64,
    pub beat_hz: f64,
    /// Skeleton preset name (`toy8` or `body24`).
    pub skeleton: String,
    /// Fixed family, or a random one per sequence.
    pub family: Option<MotionFamily>,
    /// Frame of the first beat; random per sequence when `random_phase`.
    pub beat_offset: usize,
    pub random_phase: bool,
    pub captions: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_sequences: 8,
            seconds: 4.0,
            fps: 20.0,
            beat_hz: 2.0,
            skeleton: "toy8".into(),
            family: None,
            beat_offset: 0,
            random_phase: false,
            captions: true,
        }
    }
}

fn integral(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

impl SyntheticSpec {
    /// Frames per beat.
    pub fn beat_period(&self) -> Result<usize> {
        integral(self.fps / self.beat_hz).ok_or_else(|| {
            Error::param(format!(
                "beat period {} / {} is not a whole number of frames",
                self.fps, self.beat_hz
            ))
        })
    }

    pub fn frames(&self) -> Result<usize> {
        integral(self.fps * self.seconds).ok_or_else(|| {
            Error::param(format!("fps x seconds = {} is not integral", self.fps * self.seconds))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.beat_hz > 0.0 && self.seconds > 0.0) {
            return Err(Error::param("fps, beat_hz and seconds must be positive"));
        }
        self.beat_period()?;
        self.frames()?;
        Skeleton::preset(&self.skeleton)?;
        Ok(())
    }
}

/// One entry of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub name: String,
    pub motion: String,
    pub audio: Option<String>,
    pub caption: Option<String>,
    pub family: Option<MotionFamily>,
    pub side: Option<Side>,
    pub beat_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub fps: f64,
    pub sample_rate: u32,
    pub skeleton: SkeletonSpec,
    pub items: Vec<ManifestItem>,
}

/// Root-relative rest pose for a preset (metres, y up, x to the figure's left).
fn rest_pose(skel: &Skeleton) -> Result<Vec<[f64; 3]>> {
    let table: &[(&str, [f64; 3])] = &[
        ("pelvis", [0.0, 0.0, 0.0]),
        ("chest", [0.0, 0.5, 0.0]),
        ("l_elbow", [0.35, 0.45, 0.0]),
        ("l_hand", [0.6, 0.3, 0.0]),
        ("l_foot", [0.15, -0.85, 0.0]),
        ("l_hip", [0.09, -0.08, 0.0]),
        ("spine1", [0.0, 0.11, 0.0]),
        ("l_knee", [0.11, -0.46, 0.0]),
        ("spine2", [0.0, 0.24, 0.0]),
        ("l_ankle", [0.12, -0.86, 0.0]),
        ("spine3", [0.0, 0.30, 0.0]),
        ("l_toe", [0.12, -0.92, 0.12]),
        ("neck", [0.0, 0.52, 0.0]),
        ("l_collar", [0.08, 0.42, 0.0]),
        ("head", [0.0, 0.62, 0.05]),
        ("l_shoulder", [0.18, 0.45, 0.0]),
        ("l_wrist", [0.70, 0.45, 0.0]),
        ("l_palm", [0.78, 0.45, 0.0]),
    ];
    let lookup = |name: &str| -> Option<[f64; 3]> {
        // body24 uses l_foot/l_hand for the distal toe and palm joints.
        let key = match (skel.joint_count(), name) {
            (24, "l_foot") => "l_toe",
            (24, "l_hand") => "l_palm",
            _ => name,
        };
        table.iter().find(|(n, _)| *n == key).map(|(_, p)| *p)
    };
    skel.joint_names()
        .iter()
        .map(|name| {
            if let Some(p) = lookup(name) {
                return Ok(p);
            }
            let mirrored = name.strip_prefix("r_").map(|s| format!("l_{s}"));
            match mirrored.as_deref().and_then(lookup) {
                Some([x, y, z]) => Ok([-x, y, z]),
                None => Err(Error::param(format!("no rest position for joint `{name}`"))),
            }
        })
        .collect()
}

/// Joints driven by each family: the upper arm, forearm and leg segments.
struct Rig {
    upper_arm: [usize; 2],
    forearm: [usize; 2],
    leg: [usize; 2],
}

impl Rig {
    fn of(skel: &Skeleton) -> Result<Rig> {
        let find = |n: &str| {
            skel.joint_names()
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::param(format!("skeleton lacks joint `{n}`")))
        };
        let body24 = skel.joint_count() == 24;
        let (fore, leg) = if body24 { ("wrist", "knee") } else { ("hand", "foot") };
        Ok(Rig {
            upper_arm: [find("l_elbow")?, find("r_elbow")?],
            forearm: [find(&format!("l_{fore}"))?, find(&format!("r_{fore}"))?],
            leg: [find(&format!("l_{leg}"))?, find(&format!("r_{leg}"))?],
        })
    }
}

fn subtree(skel: &Skeleton, joint: usize) -> Vec<usize> {
    (0..skel.joint_count())
        .filter(|&j| {
            let mut cur = Some(j);
            while let Some(c) = cur {
                if c == joint {
                    return true;
                }
                cur = skel.parent(c);
            }
            false
        })
        .collect()
}

/// Rotates `joint` and its descendants about its parent's position.
/// `axis` 2 rotates in the frontal (x-y) plane, 0 in the sagittal (y-z) plane.
fn rotate_subtree(pose: &mut [[f64; 3]], skel: &Skeleton, joint: usize, axis: usize, angle: f64) {
    let pivot = pose[skel.parent(joint).expect("rig joints are not the root")];
    let (a, b) = if axis == 2 { (0, 1) } else { (1, 2) };
    let (s, c) = angle.sin_cos();
    for j in subtree(skel, joint) {
        let (da, db) = (pose[j][a] - pivot[a], pose[j][b] - pivot[b]);
        pose[j][a] = pivot[a] + c * da - s * db;
        pose[j][b] = pivot[b] + s * da + c * db;
    }
}

/// Swing progress in `[0, 1]` at frame `t`: a `sin^2`-speed ramp per beat,
/// reversing direction every beat. Stops fall half a frame before each beat
/// frame so the backward-difference speed at the beat frame is exactly 0.
pub fn swing(t: f64, period: f64, offset: f64) -> f64 {
    let s = (t - offset + 0.5) / period;
    let k = s.floor();
    let u = s - k;
    let g = u - (2.0 * PI * u).sin() / (2.0 * PI);
    if (k as i64).rem_euclid(2) == 0 {
        g
    } else {
        1.0 - g
    }
}

/// Everything generated for one sequence.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub motion: MotionSequence,
    pub audio: Waveform,
    pub caption: String,
    pub family: MotionFamily,
    pub side: Side,
    pub beat_frames: Vec<usize>,
}

/// Generates sequence `index` of a dataset. Pure in `(spec, seed, index)`.
pub fn synth_sequence(spec: &SyntheticSpec, seed: u64, index: usize) -> Result<SyntheticSequence> {
    spec.validate()?;
    let skel = Skeleton::preset(&spec.skeleton)?;
    let rest = rest_pose(&skel)?;
    let rig = Rig::of(&skel)?;
    let period = spec.beat_period()?;
    let n = spec.frames()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);

    let family = spec
        .family
        .unwrap_or(MotionFamily::ALL[rng.random_range(0..MotionFamily::ALL.len())]);
    let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
    let amplitude = rng.random_range(0.5..1.0);
    let offset = if spec.random_phase {
        rng.random_range(0..period)
    } else {
        spec.beat_offset % period
    };
    let si = match side {
        Side::Left => 0,
        Side::Right => 1,
    };
    let mirror = if si == 0 { 1.0 } else { -1.0 };

    let j = skel.joint_count();
    let mut frames = Mat::zeros(n, 3 * j);
    for t in 0..n {
        let theta = amplitude * swing(t as f64, period as f64, offset as f64);
        let mut pose = rest.clone();
        let mut root = [0.0; 3];
        match family {
            MotionFamily::Waves => {
                rotate_subtree(&mut pose, &skel, rig.forearm[si], 2, mirror * 0.5 * theta);
                rotate_subtree(&mut pose, &skel, rig.upper_arm[si], 2, mirror * theta);
            }
            MotionFamily::Bends => {
                rotate_subtree(&mut pose, &skel, rig.forearm[si], 2, mirror * 1.5 * theta);
                rotate_subtree(&mut pose, &skel, rig.upper_arm[si], 2, mirror * 0.3 * theta);
            }
            MotionFamily::Steps => {
                rotate_subtree(&mut pose, &skel, rig.leg[si], 0, 0.8 * theta);
                root[0] = mirror * 0.15 * theta;
            }
        }
        let row = frames.row_mut(t);
        row[..3].copy_from_slice(&root);
        for q in 1..j {
            row[3 * q..3 * q + 3].copy_from_slice(&pose[q]);
        }
    }
    let beat_frames: Vec<usize> = (offset..n).step_by(period).collect();

    let sr = AUDIO_RATE as f64;
    let len = (spec.seconds * sr).round() as usize;
    let mut samples = vec![0.0; len];
    for &b in &beat_frames {
        let start = (b as f64 * sr / spec.fps).round() as usize;
        for (i, s) in samples.iter_mut().skip(start).take(200).enumerate() {
            *s = 0.8 * (-(i as f64) / 40.0).exp() * rng.random_range(-1.0..1.0);
        }
    }
    let side_word = match side {
        Side::Left => "left",
        Side::Right => "right",
    };
    Ok(SyntheticSequence {
        motion: MotionSequence::new(frames, spec.fps)?,
        audio: Waveform::new(samples, sr)?,
        caption: format!("a figure {} {side_word} arm", family.verb()),
        family,
        side,
        beat_frames,
    })
}

/// Writes `seq_NNN.json` motions, `seq_NNN.wav` click tracks, optional
/// `seq_NNN.txt` captions and `manifest.json`. Byte-identical per seed.
pub fn gen_data(spec: &SyntheticSpec, out_dir: &Path, seed: u64) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let skel = Skeleton::preset(&spec.skeleton)?;
    let mut items = Vec::with_capacity(spec.n_sequences);
    for i in 0..spec.n_sequences {
        let seq = synth_sequence(spec, seed, i)?;
        let name = format!("seq_{i:03}");
        let motion = format!("{name}.json");
        let audio = format!("{name}.wav");
        write_motion(&out_dir.join(&motion), &seq.motion, &skel)?;
        write_wav(&out_dir.join(&audio), &seq.audio)?;
        let caption = if spec.captions {
            let path = out_dir.join(format!("{name}.txt"));
            std::fs::write(&path, format!("{}\n", seq.caption)).map_err(|e| Error::io(&path, e))?;
            Some(seq.caption.clone())
        } else {
            None
        };
        items.push(ManifestItem {
            name,
            motion,
            audio: Some(audio),
            caption,
            family: Some(seq.family),
            side: Some(seq.side),
            beat_frames: seq.beat_frames,
        });
    }
    let manifest = Manifest {
        format: "modiff-dataset".into(),
        version: 1,
        seed,
        spec: spec.clone(),
        fps: spec.fps,
        sample_rate: AUDIO_RATE,
        skeleton: SkeletonSpec::of(&skel),
        items,
    };
    let path = out_dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A loaded sequence.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub motion: MotionSequence,
    pub audio: Option<Waveform>,
    pub caption: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub skeleton: Skeleton,
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let skeleton = manifest.skeleton.build()?;
        let mut items = Vec::with_capacity(manifest.items.len());
        for it in &manifest.items {
            let (motion, skel) = read_motion(&dir.join(&it.motion))?;
            if skel != skeleton {
                return Err(Error::Format(format!("{}: skeleton differs from manifest", it.motion)));
            }
            let audio = it.audio.as_ref().map(|a| read_wav(&dir.join(a))).transpose()?;
            items.push(DatasetItem {
                name: it.name.clone(),
                motion,
                audio,
                caption: it.caption.clone(),
            });
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            skeleton,
            items,
        })
    }

    pub fn fps(&self) -> f64 {
        self.manifest.fps
    }

    /// Vocabulary over all captions.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_corpus(self.items.iter().filter_map(|i| i.caption.as_deref()))
    }

    /// Mel spectrogram of an item's audio, resampled to the analysis rate.
    pub fn mel(&self, item: &DatasetItem, cfg: &MelConfig) -> Result<MelSpectrogram> {
        let audio = item
            .audio
            .as_ref()
            .ok_or_else(|| Error::Format(format!("{} has no audio", item.name)))?;
        mel_spectrogram(&resample(audio, cfg.sample_rate)?, cfg)
    }

    /// Clean motions paired with their conditioning for `task`.
    pub fn training_samples(
        &self,
        task: Task,
        mel_cfg: &MelConfig,
        vocab: &Vocabulary,
    ) -> Result<Vec<TrainSample>> {
        self.items
            .iter()
            .map(|item| {
                let condition = match task {
                    Task::Dance => Conditioning::Audio(self.mel(item, mel_cfg)?),
                    Task::Text => {
                        let caption = item
                            .caption
                            .as_deref()
                            .ok_or_else(|| Error::Format(format!("{} has no caption", item.name)))?;
                        Conditioning::Text(vocab.encode(caption))
                    }
                };
                Ok(TrainSample {
                    motion: item.motion.frames().clone(),
                    condition,
                })
            })
            .collect()
    }
}

/// BAS of one motion against the beats detected in its audio.
pub fn motion_bas(motion: &MotionSequence, mel: &MelSpectrogram) -> Result<f64> {
    let music = music_beats(mel, motion.fps())?;
    let kin = BeatSet::kinematic(motion)?;
    beat_alignment_score(&music, &kin, BAS_SIGMA)
}

/// Mean BAS of a dataset's own motion/audio pairs.
pub fn intrinsic_bas(data: &Dataset, cfg: &MelConfig) -> Result<f64> {
    if data.items.is_empty() {
        return Err(Error::UndefinedMetric("empty dataset".into()));
    }
    let mut total = 0.0;
    for item in &data.items {
        total += motion_bas(&item.motion, &data.mel(item, cfg)?)?;
    }
    Ok(total / data.items.len() as f64)
}
