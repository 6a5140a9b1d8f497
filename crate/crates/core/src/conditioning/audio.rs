use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Floor applied before the natural log of Mel energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::param(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical {
                name: "waveform samples".into(),
            });
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Zero crossings of the sinc kernel kept on each side.
const SINC_ZEROS: f64 = 32.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel whose
/// cutoff is the lower of the two Nyquist frequencies.
pub fn resample(w: &Waveform, target_rate: f64) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::dim("cannot resample an empty waveform"));
    }
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::param(format!("target rate must be positive, got {target_rate}")));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate / w.sample_rate;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZEROS / cutoff;
    let src = &w.samples;
    let n = src.len() as i64;
    let samples = (0..out_len)
        .map(|i| {
            let x = i as f64 / ratio;
            let lo = ((x - half_width).ceil() as i64).max(0);
            let hi = ((x + half_width).floor() as i64).min(n - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let d = x - k as f64;
                let u = d / half_width;
                let window = 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos();
                acc += src[k as usize] * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect();
    Waveform::new(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Log-Mel analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: f64,
    pub bands: usize,
    pub hop: usize,
    pub window: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    /// 16 kHz, 80 bands, hop 512, 1024-sample Hann window, 0 to 8 kHz.
    fn default() -> Self {
        MelConfig {
            sample_rate: 16000.0,
            bands: 80,
            hop: 512,
            window: 1024,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl MelConfig {
    /// Spectrogram frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate / self.hop as f64
    }
}

/// `m x k` log-power Mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Mat,
    hop: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
}

impl MelSpectrogram {
    pub fn new(frames: Mat, hop: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Result<Self> {
        if frames.cols() == 0 || hop == 0 || sample_rate <= 0.0 {
            return Err(Error::param("mel spectrogram needs bands, hop and rate > 0"));
        }
        if !frames.is_finite() {
            return Err(Error::Numerical {
                name: "mel spectrogram".into(),
            });
        }
        Ok(MelSpectrogram {
            frames,
            hop,
            sample_rate,
            fmin,
            fmax,
        })
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }

    pub fn bands(&self) -> usize {
        self.frames.cols()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn fmax(&self) -> f64 {
        self.fmax
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate / self.hop as f64
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<MelSpectrogram> {
        if start + len > self.frame_count() || len == 0 {
            return Err(Error::dim(format!(
                "mel slice {start}+{len} outside {} frames",
                self.frame_count()
            )));
        }
        MelSpectrogram::new(
            self.frames.slice_rows(start, len),
            self.hop,
            self.sample_rate,
            self.fmin,
            self.fmax,
        )
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `k` triangular filters.
pub fn mel_band_centers(k: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=k)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (k + 1) as f64))
        .collect()
}

/// `k x (n_fft/2 + 1)` triangular filterbank with unit peaks.
pub fn mel_filterbank(k: usize, n_fft: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Mat {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..k + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (k + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    Mat::from_fn(k, bins, |b, i| {
        let f = i as f64 * sample_rate / n_fft as f64;
        let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
        let up = (f - left) / (center - left);
        let down = (right - f) / (right - center);
        up.min(down).max(0.0)
    })
}

/// Index into a signal of length `n` under repeated reflection about the
/// endpoints (the endpoints themselves are not duplicated).
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let r = i.rem_euclid(period);
    (if r < n as i64 { r } else { period - r }) as usize
}

/// Center-padded STFT power through a Mel filterbank, then `ln(max(e, 1e-10))`.
/// Produces `1 + len / hop` frames.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let sr = w.sample_rate();
    if sr != cfg.sample_rate {
        return Err(Error::param(format!(
            "waveform is at {sr} Hz but analysis expects {} Hz; resample first",
            cfg.sample_rate
        )));
    }
    if cfg.bands == 0 || cfg.hop == 0 || cfg.window < cfg.hop {
        return Err(Error::param(format!(
            "need bands > 0 and window {} >= hop {}",
            cfg.window, cfg.hop
        )));
    }
    if cfg.fmax > sr / 2.0 || cfg.fmin < 0.0 || cfg.fmin >= cfg.fmax {
        return Err(Error::param(format!(
            "band [{}, {}] Hz invalid for Nyquist {}",
            cfg.fmin,
            cfg.fmax,
            sr / 2.0
        )));
    }
    if w.is_empty() {
        return Err(Error::dim("empty waveform"));
    }
    let n_fft = cfg.window;
    let bank = mel_filterbank(cfg.bands, n_fft, sr, cfg.fmin, cfg.fmax);
    let hann: Vec<f64> = (0..n_fft)
        .map(|i| (PI * i as f64 / n_fft as f64).sin().powi(2))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let frames = 1 + w.len() / cfg.hop;
    let pad = (n_fft / 2) as i64;
    let bins = n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; bins];
    let mut out = Mat::zeros(frames, cfg.bands);
    let s = w.samples();
    for f in 0..frames {
        let start = (f * cfg.hop) as i64 - pad;
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(s[reflect(start + j as i64, s.len())] * hann[j], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let row = out.row_mut(f);
        for (b, slot) in row.iter_mut().enumerate() {
            let e: f64 = bank.row(b).iter().zip(&power).map(|(a, p)| a * p).sum();
            *slot = e.max(LOG_FLOOR).ln();
        }
    }
    MelSpectrogram::new(out, cfg.hop, sr, cfg.fmin, cfg.fmax)
}

/// Reads RIFF/PCM 16-bit integer or 32-bit float audio, averaging channels.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported WAV encoding {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    }
    .map_err(|e| wav_error(path, e))?;
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate as f64)
}

/// Writes mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate().round() as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in w.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}
