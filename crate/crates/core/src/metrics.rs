//! Evaluation metrics: music/kinematic beat alignment, kinetic features,
//! Fréchet distance, diversity and multi-modality.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::conditioning::MelSpectrogram;
use crate::diffusion::{sample, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::motion::{kinematic_beats, kinetic_velocity, MotionSequence};
use crate::nn::ConditioningContext;

/// Kernel width of the beat alignment score, in motion frames.
pub const BAS_SIGMA: f64 = 3.0;
/// Number of samples per context for multi-modality.
pub const MULTI_MODALITY_K: usize = 50;
/// Covariance ridge added before the Fréchet matrix square root.
pub const FRECHET_RIDGE: f64 = 1e-6;

/// Sorted, strictly increasing beat frame indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSet {
    beats: Vec<usize>,
    fps: f64,
}

impl BeatSet {
    pub fn new(beats: Vec<usize>, fps: f64) -> Result<Self> {
        if beats.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("beat frames must be strictly increasing"));
        }
        if !(fps > 0.0) {
            return Err(Error::param(format!("fps must be positive, got {fps}")));
        }
        Ok(BeatSet { beats, fps })
    }

    pub fn beats(&self) -> &[usize] {
        &self.beats
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Stopping points of a motion's mean joint speed.
    pub fn kinematic(motion: &MotionSequence) -> Result<BeatSet> {
        let v = kinetic_velocity(motion)?;
        BeatSet::new(kinematic_beats(&v), motion.fps())
    }
}

/// Onset detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetConfig {
    /// Peaks must exceed `mean + threshold_sd * sd` of the envelope.
    pub threshold_sd: f64,
    /// Offset, in hops, added to a detected frame's center time. An onset
    /// first shows in the frame whose window end crosses it, which on
    /// average sits half a hop before the event.
    pub latency_hops: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        OnsetConfig {
            threshold_sd: 1.0,
            latency_hops: 0.5,
        }
    }
}

/// Per-frame sum of positive first differences across Mel bands; frame 0
/// is 0.
pub fn onset_envelope(mel: &MelSpectrogram) -> Vec<f64> {
    let f = mel.frames();
    let mut env = vec![0.0; f.rows()];
    for i in 1..f.rows() {
        env[i] = f
            .row(i)
            .iter()
            .zip(f.row(i - 1))
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    env
}

/// Music beats with the default onset settings.
pub fn music_beats(mel: &MelSpectrogram, motion_fps: f64) -> Result<BeatSet> {
    music_beats_with(mel, motion_fps, &OnsetConfig::default())
}

/// Strict local maxima of the onset envelope above the threshold,
/// converted to motion frames.
pub fn music_beats_with(mel: &MelSpectrogram, motion_fps: f64, cfg: &OnsetConfig) -> Result<BeatSet> {
    let m = mel.frame_count();
    if m < 3 {
        return Err(Error::InsufficientFrames { needed: 3, got: m });
    }
    let env = onset_envelope(mel);
    let mean = env.iter().sum::<f64>() / m as f64;
    let sd = (env.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
    let threshold = mean + cfg.threshold_sd * sd;
    let hop = mel.hop() as f64;
    let mut beats: Vec<usize> = Vec::new();
    for i in 1..m - 1 {
        if env[i] > env[i - 1] && env[i] > env[i + 1] && env[i] > threshold {
            let seconds = (i as f64 + cfg.latency_hops) * hop / mel.sample_rate();
            let frame = (seconds * motion_fps).round().max(0.0) as usize;
            if beats.last().is_none_or(|&b| b < frame) {
                beats.push(frame);
            }
        }
    }
    BeatSet::new(beats, motion_fps)
}

/// `(1/|B^m|) sum_{b^m} exp(-min_{b^d} |b^d - b^m|^2 / (2 sigma^2))`,
/// distances in frames. No kinematic beats scores 0.
pub fn beat_alignment_score(music: &BeatSet, kinematic: &BeatSet, sigma: f64) -> Result<f64> {
    if music.is_empty() {
        return Err(Error::UndefinedMetric(
            "beat alignment needs at least one music beat".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    if kinematic.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = music
        .beats()
        .iter()
        .map(|&bm| {
            let d = nearest_distance(kinematic.beats(), bm);
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / music.len() as f64)
}

fn nearest_distance(sorted: &[usize], x: usize) -> f64 {
    let i = sorted.partition_point(|&b| b < x);
    let after = sorted.get(i).map(|&b| (b - x) as f64);
    let before = i.checked_sub(1).map(|j| (x - sorted[j]) as f64);
    match (before, after) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => f64::INFINITY,
    }
}

/// Per-joint mean squared velocity followed by per-joint mean squared
/// acceleration (`2J` entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticFeature(pub Vec<f64>);

impl KineticFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Finite-difference velocity (`x fps`) and acceleration (`x fps^2`)
/// energies per joint.
pub fn kinetic_features(motion: &MotionSequence) -> Result<KineticFeature> {
    let n = motion.len();
    if n < 3 {
        return Err(Error::InsufficientFrames { needed: 3, got: n });
    }
    let j = motion.joint_count();
    let f = motion.frames();
    let fps = motion.fps();
    let mut out = vec![0.0; 2 * j];
    for joint in 0..j {
        let mut vel = 0.0;
        for t in 0..n - 1 {
            vel += (0..3)
                .map(|k| ((f.get(t + 1, 3 * joint + k) - f.get(t, 3 * joint + k)) * fps).powi(2))
                .sum::<f64>();
        }
        let mut acc = 0.0;
        for t in 0..n - 2 {
            acc += (0..3)
                .map(|k| {
                    let c = 3 * joint + k;
                    ((f.get(t + 2, c) - 2.0 * f.get(t + 1, c) + f.get(t, c)) * fps * fps).powi(2)
                })
                .sum::<f64>();
        }
        out[joint] = vel / (n - 1) as f64;
        out[j + joint] = acc / (n - 2) as f64;
    }
    Ok(KineticFeature(out))
}

fn check_features(set: &[KineticFeature], what: &str) -> Result<usize> {
    if set.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "{what} needs at least 2 features, got {}",
            set.len()
        )));
    }
    let d = set[0].dim();
    if set.iter().any(|f| f.dim() != d) {
        return Err(Error::dim(format!("{what}: features differ in length")));
    }
    Ok(d)
}

fn gaussian_fit(set: &[KineticFeature], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for f in set {
        mu += DVector::from_column_slice(f.as_slice());
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in set {
        let x = DVector::from_column_slice(f.as_slice()) - &mu;
        cov += &x * x.transpose();
    }
    cov /= n - 1.0;
    for i in 0..d {
        cov[(i, i)] += FRECHET_RIDGE;
    }
    (mu, cov)
}

/// Symmetric PSD square root with negative eigenvalues clamped to 0.
fn sqrtm_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `|mu_A - mu_B|^2 + Tr(S_A + S_B - 2 (S_A^1/2 S_B S_A^1/2)^1/2)`.
pub fn frechet_distance(set_a: &[KineticFeature], set_b: &[KineticFeature]) -> Result<f64> {
    let d = check_features(set_a, "frechet_distance")?;
    if check_features(set_b, "frechet_distance")? != d {
        return Err(Error::dim("frechet_distance: feature sets differ in dimension"));
    }
    let (mu_a, cov_a) = gaussian_fit(set_a, d);
    let (mu_b, cov_b) = gaussian_fit(set_b, d);
    let root_a = sqrtm_psd(cov_a.clone());
    let cross = sqrtm_psd(&root_a * &cov_b * &root_a);
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let trace = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    let fid = mean_term + trace;
    if !fid.is_finite() {
        return Err(Error::Numerical {
            name: "frechet distance".into(),
        });
    }
    Ok(fid.max(0.0))
}

/// Mean Euclidean distance over all unordered feature pairs.
pub fn diversity(features: &[KineticFeature]) -> Result<f64> {
    check_features(features, "diversity")?;
    let n = features.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += features[i]
                .as_slice()
                .iter()
                .zip(features[j].as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Diversity of the kinetic features of one sample per seed, all drawn
/// with the same context. `shape` is `(frames, channels)`.
pub fn multi_modality<P: NoisePredictor + ?Sized>(
    model: &P,
    context: Option<&ConditioningContext>,
    shape: (usize, usize),
    fps: f64,
    sched: &NoiseSchedule,
    seeds: &[u64],
) -> Result<f64> {
    if seeds.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "multi-modality needs K >= 2 seeds, got {}",
            seeds.len()
        )));
    }
    let features = seeds
        .iter()
        .map(|&seed| {
            let m = sample(model, context, shape, sched, seed)?;
            kinetic_features(&MotionSequence::new(m, fps)?)
        })
        .collect::<Result<Vec<_>>>()?;
    diversity(&features)
}
