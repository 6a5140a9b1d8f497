//! Noise schedule, closed-form forward diffusion, the ancestral reverse
//! sampler and the masked sampler used for seed conditioning and
//! inbetweening.
//!
//! Timesteps are zero-indexed: `t = 0..T`, where step 0 is the least noisy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ConditioningContext;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced variances from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::param(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let span = beta_end - beta_start;
        let beta = (0..steps)
            .map(|t| beta_start + (t as f64 / (steps - 1) as f64) * span)
            .collect();
        Ok(Self::from_betas(beta))
    }

    /// 1000 steps, beta from 1e-4 to 0.02.
    pub fn standard() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("standard schedule is valid")
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::param(format!(
                "timestep {t} out of range 0..{}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Posterior variance `beta_t (1 - abar_{t-1}) / (1 - abar_t)`, zero at t = 0.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
        }
    }
}

/// Frames fixed during editing (`true` = observed, never denoised).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    keep: Vec<bool>,
}

impl FrameMask {
    pub fn new(keep: Vec<bool>) -> Self {
        FrameMask { keep }
    }

    /// First `seed_frames` of `len` frames are kept.
    pub fn prefix(len: usize, seed_frames: usize) -> Result<Self> {
        if seed_frames > len {
            return Err(Error::param(format!(
                "prefix of {seed_frames} frames exceeds length {len}"
            )));
        }
        Ok(FrameMask {
            keep: (0..len).map(|i| i < seed_frames).collect(),
        })
    }

    pub fn keyframes(len: usize, frames: &[usize]) -> Result<Self> {
        let mut keep = vec![false; len];
        for &f in frames {
            if f >= len {
                return Err(Error::param(format!("keyframe {f} outside 0..{len}")));
            }
            keep[f] = true;
        }
        Ok(FrameMask { keep })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, frame: usize) -> bool {
        self.keep[frame]
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Default seed length: two seconds of frames.
pub fn default_seed_frames(fps: f64) -> usize {
    (2.0 * fps).round() as usize
}

/// Anything that predicts the injected noise from a noisy motion.
pub trait NoisePredictor {
    fn predict_noise(
        &self,
        noisy: &Mat,
        t: usize,
        context: Option<&ConditioningContext>,
    ) -> Result<Mat>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, noisy: &Mat, t: usize, context: Option<&ConditioningContext>) -> Result<Mat> {
        (**self).predict_noise(noisy, t, context)
    }
}

/// `sqrt(abar_t) m0 + sqrt(1 - abar_t) eps`
pub fn q_sample(m0: &Mat, t: usize, eps: &Mat, sched: &NoiseSchedule) -> Result<Mat> {
    sched.check_step(t)?;
    m0.ensure_shape(eps, "q_sample noise")?;
    let ab = sched.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(m0.zip(eps, |x, e| a * x + b * e))
}

/// Clean-motion estimate `m_t / sqrt(abar_t) - sqrt(1/abar_t - 1) eps_hat`.
pub fn estimate_m0(mt: &Mat, t: usize, eps_hat: &Mat, sched: &NoiseSchedule) -> Result<Mat> {
    sched.check_step(t)?;
    mt.ensure_shape(eps_hat, "estimate_m0 noise")?;
    let (a, b) = m0_coefficients(sched, t);
    Ok(mt.zip(eps_hat, |x, e| a * x - b * e))
}

pub(crate) fn m0_coefficients(sched: &NoiseSchedule, t: usize) -> (f64, f64) {
    let ab = sched.alpha_bar[t];
    (1.0 / ab.sqrt(), (1.0 / ab - 1.0).sqrt())
}

/// One ancestral step `m_t -> m_{t-1}` with the posterior variance.
/// `noise` is ignored at `t = 0`.
pub fn reverse_step(
    mt: &Mat,
    t: usize,
    eps_hat: &Mat,
    sched: &NoiseSchedule,
    noise: &Mat,
) -> Result<Mat> {
    sched.check_step(t)?;
    mt.ensure_shape(eps_hat, "reverse_step prediction")?;
    mt.ensure_shape(noise, "reverse_step noise")?;
    let inv_sqrt_alpha = 1.0 / sched.alpha[t].sqrt();
    let eps_coef = sched.beta[t] / (1.0 - sched.alpha_bar[t]).sqrt();
    let sigma = sched.posterior_variance(t).sqrt();
    let mut out = mt.zip(eps_hat, |x, e| inv_sqrt_alpha * (x - eps_coef * e));
    if t > 0 {
        out.axpy(sigma, noise);
    }
    Ok(out)
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Ancestral sampling from pure noise. Deterministic in `seed`.
pub fn sample<P: NoisePredictor + ?Sized>(
    model: &P,
    context: Option<&ConditioningContext>,
    shape: (usize, usize),
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Mat> {
    let (n, c) = shape;
    if n == 0 || c == 0 {
        return Err(Error::dim(format!("cannot sample shape {n}x{c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = standard_normal(&mut rng, n, c);
    for t in (0..sched.steps()).rev() {
        let eps_hat = model.predict_noise(&x, t, context)?;
        let noise = if t > 0 {
            standard_normal(&mut rng, n, c)
        } else {
            Mat::zeros(n, c)
        };
        x = reverse_step(&x, t, &eps_hat, sched, &noise)?;
    }
    Ok(x)
}

/// Per-channel bounds on clean motions, taken from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MotionRange {
    /// Fraction of the widest channel span added on both sides of every
    /// channel.
    pub const MARGIN: f64 = 0.1;

    /// Channel-wise min/max over `motions`, widened by [`Self::MARGIN`].
    pub fn of<'a>(motions: impl IntoIterator<Item = &'a Mat>) -> Result<Self> {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        for m in motions {
            if lo.is_empty() {
                lo = vec![f64::INFINITY; m.cols()];
                hi = vec![f64::NEG_INFINITY; m.cols()];
            }
            if m.cols() != lo.len() {
                return Err(Error::dim(format!("motion has {} channels, expected {}", m.cols(), lo.len())));
            }
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
        }
        if lo.is_empty() || lo.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("motion range needs at least one frame"));
        }
        let span = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        let pad = Self::MARGIN * span;
        Ok(MotionRange {
            lo: lo.iter().map(|v| v - pad).collect(),
            hi: hi.iter().map(|v| v + pad).collect(),
        })
    }

    pub fn channels(&self) -> usize {
        self.lo.len()
    }
}

/// Wraps a predictor so that the clean-motion estimate implied by its
/// output stays inside a [`MotionRange`]. Returns the noise consistent with
/// the clamped estimate, so the ancestral step itself is unchanged. Keeps
/// the early, high-noise part of the chain from drifting off the data.
pub struct ClampedPredictor<'a, P: ?Sized> {
    pub inner: &'a P,
    pub range: &'a MotionRange,
    pub sched: &'a NoiseSchedule,
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for ClampedPredictor<'_, P> {
    fn predict_noise(&self, noisy: &Mat, t: usize, context: Option<&ConditioningContext>) -> Result<Mat> {
        if noisy.cols() != self.range.channels() {
            return Err(Error::dim(format!(
                "motion range covers {} channels, motion has {}",
                self.range.channels(),
                noisy.cols()
            )));
        }
        let eps_hat = self.inner.predict_noise(noisy, t, context)?;
        let mut m0 = estimate_m0(noisy, t, &eps_hat, self.sched)?;
        for r in 0..m0.rows() {
            for (c, v) in m0.row_mut(r).iter_mut().enumerate() {
                *v = v.clamp(self.range.lo[c], self.range.hi[c]);
            }
        }
        let ab = self.sched.alpha_bar[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(noisy.zip(&m0, |x, m| (x - a * m) / b))
    }
}

/// Masked reverse diffusion: kept frames are re-noised from `seed_motion`
/// with fresh noise before every denoising step and restored exactly at the
/// end; the remaining frames follow the ordinary ancestral chain.
pub fn masked_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    context: Option<&ConditioningContext>,
    seed_motion: &Mat,
    mask: &FrameMask,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Mat> {
    let (n, c) = seed_motion.shape();
    if mask.len() != n {
        return Err(Error::dim(format!(
            "mask covers {} frames, seed motion has {n}",
            mask.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = standard_normal(&mut rng, n, c);
    let kept: Vec<usize> = (0..n).filter(|&i| mask.is_kept(i)).collect();
    for t in (0..sched.steps()).rev() {
        if !kept.is_empty() {
            let eps = standard_normal(&mut rng, kept.len(), c);
            let ab = sched.alpha_bar[t];
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            for (k, &row) in kept.iter().enumerate() {
                let src = seed_motion.row(row);
                let e = eps.row(k);
                for ((o, &s), &ev) in x.row_mut(row).iter_mut().zip(src).zip(e) {
                    *o = a * s + b * ev;
                }
            }
        }
        let eps_hat = model.predict_noise(&x, t, context)?;
        let noise = if t > 0 {
            standard_normal(&mut rng, n, c)
        } else {
            Mat::zeros(n, c)
        };
        x = reverse_step(&x, t, &eps_hat, sched, &noise)?;
    }
    for &row in &kept {
        x.row_mut(row).copy_from_slice(seed_motion.row(row));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct Zero;

    impl NoisePredictor for Zero {
        fn predict_noise(&self, noisy: &Mat, _: usize, _: Option<&ConditioningContext>) -> Result<Mat> {
            Ok(Mat::zeros(noisy.rows(), noisy.cols()))
        }
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = NoiseSchedule::standard();
        assert_eq!(s.beta()[0], 0.0001);
        assert_eq!(s.beta()[999], 0.02);
        assert_eq!(s.alpha_bar()[0], 1.0 - 0.0001);
        let mut prod = 1.0f64;
        for b in s.beta() {
            prod *= 1.0 - b;
        }
        assert!(prod < 1e-4);
        assert!((s.alpha_bar()[999] - prod).abs() <= 1e-12 * prod);
    }

    #[test]
    fn schedule_invariants() {
        for (steps, b0, b1) in [(2, 0.1, 0.1), (50, 1e-3, 0.05), (1000, 1e-4, 0.02)] {
            let s = NoiseSchedule::linear(steps, b0, b1).unwrap();
            assert!(s.beta().iter().all(|&b| b > 0.0 && b < 1.0));
            assert!(s.beta().windows(2).all(|w| w[0] <= w[1]));
            assert!(s.alpha_bar().windows(2).all(|w| w[1] < w[0]));
            assert_eq!(s.alpha_bar()[0], 1.0 - b0);
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn q_sample_special_cases() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m0 = rand_mat(&mut rng, 4, 6);
        let eps = rand_mat(&mut rng, 4, 6);
        let zero = Mat::zeros(4, 6);
        for t in [0, 17, 999] {
            let ab = s.alpha_bar()[t];
            assert_eq!(q_sample(&m0, t, &zero, &s).unwrap(), m0.map(|v| ab.sqrt() * v));
            assert_eq!(q_sample(&zero, t, &eps, &s).unwrap(), eps.map(|v| (1.0 - ab).sqrt() * v));
        }
        assert!(q_sample(&m0, 1000, &eps, &s).is_err());
        assert!(q_sample(&m0, 3, &Mat::zeros(4, 5), &s).is_err());
    }

    #[test]
    fn q_sample_matches_scalar_loop() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m0 = rand_mat(&mut rng, 10, 24);
        let eps = rand_mat(&mut rng, 10, 24);
        let out = q_sample(&m0, 500, &eps, &s).unwrap();
        let mut ab = 1.0f64;
        for t in 0..=500 {
            ab *= 1.0 - (1e-4 + (t as f64 / 999.0) * (0.02 - 1e-4));
        }
        for k in 0..out.len() {
            let expect = ab.sqrt() * m0.data()[k] + (1.0 - ab).sqrt() * eps.data()[k];
            assert!((out.data()[k] - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
        }
    }

    #[test]
    fn estimate_m0_inverts_q_sample_at_every_step() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m0 = rand_mat(&mut rng, 5, 6);
        let eps = rand_mat(&mut rng, 5, 6);
        for t in 0..s.steps() {
            let mt = q_sample(&m0, t, &eps, &s).unwrap();
            let back = estimate_m0(&mt, t, &eps, &s).unwrap();
            for (a, b) in back.data().iter().zip(m0.data()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn estimate_m0_quarter_alpha_bar() {
        // abar = 0.25 for a single-step-product schedule with beta_0 = 0.75.
        let s = NoiseSchedule::linear(2, 0.75, 0.75).unwrap();
        assert_eq!(s.alpha_bar()[0], 0.25);
        let mt = Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64 - 1.5);
        let out = estimate_m0(&mt, 0, &Mat::zeros(2, 3), &s).unwrap();
        assert_eq!(out, mt.scale(2.0));
    }

    #[test]
    fn estimate_m0_matches_scalar_loop() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mt = rand_mat(&mut rng, 6, 9);
        let eh = rand_mat(&mut rng, 6, 9);
        let out = estimate_m0(&mt, 321, &eh, &s).unwrap();
        let ab = s.alpha_bar()[321];
        for k in 0..out.len() {
            let e = mt.data()[k] / ab.sqrt() - (1.0 / ab - 1.0).sqrt() * eh.data()[k];
            assert!((out.data()[k] - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn reverse_step_ignores_noise_at_zero() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mt = rand_mat(&mut rng, 3, 3);
        let eh = rand_mat(&mut rng, 3, 3);
        let a = reverse_step(&mt, 0, &eh, &s, &rand_mat(&mut rng, 3, 3)).unwrap();
        let b = reverse_step(&mt, 0, &eh, &s, &Mat::zeros(3, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reverse_step_matches_scalar_formula() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mt = rand_mat(&mut rng, 4, 6);
        let eh = rand_mat(&mut rng, 4, 6);
        let z = rand_mat(&mut rng, 4, 6);
        let out = reverse_step(&mt, 1, &eh, &s, &z).unwrap();
        let (b0, b1): (f64, f64) = (1e-4, 1e-4 + (0.02 - 1e-4) / 999.0);
        let (ab0, ab1) = (1.0 - b0, (1.0 - b0) * (1.0 - b1));
        let sigma = (b1 * (1.0 - ab0) / (1.0 - ab1)).sqrt();
        for k in 0..out.len() {
            let e = (mt.data()[k] - b1 / (1.0 - ab1).sqrt() * eh.data()[k]) / (1.0 - b1).sqrt()
                + sigma * z.data()[k];
            assert!((out.data()[k] - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn ideal_denoiser_chain_recovers_clean_motion() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m0 = rand_mat(&mut rng, 10, 24);
        let eps = rand_mat(&mut rng, 10, 24);
        let mut x = q_sample(&m0, s.steps() - 1, &eps, &s).unwrap();
        let zero = Mat::zeros(10, 24);
        for t in (0..s.steps()).rev() {
            let ab = s.alpha_bar()[t];
            let eps_t = x.zip(&m0, |xt, m| (xt - ab.sqrt() * m) / (1.0 - ab).sqrt());
            x = reverse_step(&x, t, &eps_t, &s, &zero).unwrap();
        }
        let rms = (x.zip(&m0, |a, b| (a - b) * (a - b)).mean()).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn sampling_is_deterministic_and_matches_zero_chain() {
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let a = sample(&Zero, None, (8, 3), &s, 42).unwrap();
        let b = sample(&Zero, None, (8, 3), &s, 42).unwrap();
        assert_eq!(a, b);

        // Closed form of the zero-prediction chain: x_{t-1} = x_t / sqrt(alpha_t) + sigma_t z_t.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut x = standard_normal(&mut rng, 8, 3);
        for t in (0..50).rev() {
            let z = if t > 0 { standard_normal(&mut rng, 8, 3) } else { Mat::zeros(8, 3) };
            let sig = s.posterior_variance(t).sqrt();
            x = x.zip(&z, |v, zv| v / s.alpha()[t].sqrt() + sig * zv);
        }
        for (p, q) in a.data().iter().zip(x.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_chain_variance_matches_analytic() {
        // Var(x_{t-1}) = Var(x_t)/alpha_t + sigma_t^2 starting from 1.
        let s = NoiseSchedule::linear(30, 1e-3, 0.2).unwrap();
        let mut var = 1.0;
        for t in (0..30).rev() {
            var = var / s.alpha()[t] + s.posterior_variance(t);
        }
        let out = sample(&Zero, None, (4000, 5), &s, 9).unwrap();
        let mean = out.mean();
        let emp = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / out.len() as f64;
        // 20000 samples: relative standard error of a variance ~ sqrt(2/n) = 1%.
        assert!((emp / var - 1.0).abs() < 0.05, "empirical {emp} analytic {var}");
    }

    #[test]
    fn masked_sample_keeps_seed_frames_exactly() {
        let s = NoiseSchedule::linear(40, 1e-3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let seed = rand_mat(&mut rng, 200, 6);
        let mask = FrameMask::prefix(200, 40).unwrap();
        let out = masked_sample(&Zero, None, &seed, &mask, &s, 3).unwrap();
        for r in 0..40 {
            assert_eq!(out.row(r), seed.row(r));
        }
        assert_ne!(out.row(100), seed.row(100));

        let all = FrameMask::new(vec![true; 200]);
        assert_eq!(masked_sample(&Zero, None, &seed, &all, &s, 3).unwrap(), seed);
    }

    #[test]
    fn masked_sample_rejects_mismatched_mask() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        let seed = Mat::zeros(10, 3);
        let mask = FrameMask::prefix(9, 2).unwrap();
        assert!(masked_sample(&Zero, None, &seed, &mask, &s, 0).is_err());
    }

    #[test]
    fn forward_diffusion_preserves_unit_variance() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 100_000;
        let m0 = standard_normal(&mut rng, n, 1);
        let eps = standard_normal(&mut rng, n, 1);
        for t in [0, 250, 999] {
            let x = q_sample(&m0, t, &eps, &s).unwrap();
            let mean = x.mean();
            let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            // Var of the sample variance of a unit normal is 2/n.
            let band = 3.0 * (2.0 / n as f64).sqrt();
            assert!((var - 1.0).abs() < band, "t={t} var {var}");
        }
    }

    #[test]
    fn default_seed_is_two_seconds() {
        assert_eq!(default_seed_frames(20.0), 40);
    }

    #[test]
    fn motion_range_pads_by_widest_span() {
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
        let r = MotionRange::of([&a]).unwrap();
        assert_eq!(r.lo, vec![-0.2, 0.8]);
        assert_eq!(r.hi, vec![2.2, 1.2]);
        assert!(MotionRange::of(std::iter::empty::<&Mat>()).is_err());
    }

    #[test]
    fn clamped_predictor_bounds_the_clean_estimate() {
        let sched = NoiseSchedule::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let range = MotionRange { lo: vec![-0.5; 3], hi: vec![0.5; 3] };
        let p = ClampedPredictor { inner: &Zero, range: &range, sched: &sched };
        for t in [0, 400, 999] {
            let x = rand_mat(&mut rng, 6, 3);
            let m0 = estimate_m0(&x, t, &p.predict_noise(&x, t, None).unwrap(), &sched).unwrap();
            assert!(m0.data().iter().all(|v| (-0.5 - 1e-9..=0.5 + 1e-9).contains(v)));
        }
        // inside the range the wrapped prediction passes through
        let wide = MotionRange { lo: vec![-1e9; 3], hi: vec![1e9; 3] };
        let p = ClampedPredictor { inner: &Zero, range: &wide, sched: &sched };
        let x = rand_mat(&mut rng, 6, 3);
        let e = p.predict_noise(&x, 10, None).unwrap();
        assert!(e.data().iter().all(|v| v.abs() < 1e-9));
        assert!(p.predict_noise(&Mat::zeros(2, 4), 0, None).is_err());
    }
}
