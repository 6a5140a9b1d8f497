//! Acceptance suite: one PASS/FAIL line per criterion and a summary line.
//! Runs as a plain binary (`harness = false`). A failed criterion is
//! reported, not raised; only a broken harness panics. Pass
//! `--strict` to exit 1 when any criterion fails.

mod common;

use std::time::Instant;

use modiff::checkpoint::CheckpointMeta;
use modiff::conditioning::{mel_spectrogram, Conditioning, MelConfig, Waveform};
use modiff::data::{gen_data, motion_bas, Dataset, SyntheticSpec};
use modiff::diffusion::{
    estimate_m0, masked_sample, q_sample, sample, ClampedPredictor, FrameMask, MotionRange, NoiseSchedule,
};
use modiff::losses::{loss_skeleton, LossWeights};
use modiff::metrics::{beat_alignment_score, frechet_distance, multi_modality, BeatSet, KineticFeature};
use modiff::motion::MotionSequence;
use modiff::nn::{ConditioningConfig, DenoiserModel};
use modiff::trainer::{train, Task, TrainConfig, TrainSample, Trainer};
use modiff::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gradient_check, micro_config, normal, small_hyper};

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
    limit: f64,
}

fn report(line: &Line) {
    let ok = line.pass && line.secs < line.limit;
    println!(
        "criterion {} [{}] {}: {} ({:.1}s of {:.0}s)",
        line.id,
        if ok { "PASS" } else { "FAIL" },
        line.title,
        line.detail,
        line.secs,
        line.limit
    );
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn rel_norm(a: &Mat, b: &Mat) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    (diff / b.sum_squares()).sqrt()
}

fn diffusion_algebra() -> Line {
    let ((worst, n), secs) = timed(|| {
        let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let rows = rng.random_range(1..64);
            let cols = rng.random_range(1..32);
            let m0 = normal(&mut rng, rows, cols, 1.0);
            let eps = normal(&mut rng, rows, cols, 1.0);
            let t = rng.random_range(0..1000);
            let mt = q_sample(&m0, t, &eps, &sched).unwrap();
            let back = estimate_m0(&mt, t, &eps, &sched).unwrap();
            worst = worst.max(rel_norm(&back, &m0));
        }
        (worst, 100)
    });
    Line {
        id: 1,
        title: "diffusion algebra",
        pass: worst <= 1e-9,
        detail: format!("worst relative error {worst:.2e} over {n} triples (tol 1e-9)"),
        secs,
        limit: 1.0,
    }
}

fn schedule() -> Line {
    let ((pass, detail), secs) = timed(|| {
        let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let ab = sched.alpha_bar();
        let decreasing = ab.windows(2).all(|w| w[1] < w[0]);
        let mut prod = 1.0f64;
        let mut oracle_err: f64 = 0.0;
        for (i, &a) in ab.iter().enumerate() {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
            oracle_err = oracle_err.max((a - prod).abs() / prod);
        }
        let first = ab[0] == 0.9999;
        let last = ab[999];
        (
            decreasing && first && last < 1e-4 && oracle_err < 1e-12,
            format!(
                "decreasing={decreasing}, abar_0={} (exact {first}), abar_T-1={last:.3e}, oracle rel err {oracle_err:.1e}",
                ab[0]
            ),
        )
    });
    Line {
        id: 2,
        title: "noise schedule",
        pass,
        detail,
        secs,
        limit: 1.0,
    }
}

fn gradients() -> Line {
    let (r, secs) = timed(|| gradient_check(5, 1e-4));
    let frac = r.passed as f64 / r.checked as f64;
    Line {
        id: 3,
        title: "gradient correctness",
        pass: r.params <= 2000 && r.checked == r.params && frac >= 0.99,
        detail: format!(
            "{}/{} parameters within 1e-4 ({:.2}%), worst {:.1e}, {} parameters",
            r.passed,
            r.checked,
            100.0 * frac,
            r.worst,
            r.params
        ),
        secs,
        limit: 120.0,
    }
}

fn features(rng: &mut ChaCha8Rng, n: usize, shift: &[f64]) -> Vec<KineticFeature> {
    (0..n)
        .map(|_| KineticFeature(shift.iter().map(|s| s + normal(rng, 1, 1, 1.0).data()[0]).collect()))
        .collect()
}

fn metric_oracles() -> Line {
    let ((pass, detail), secs) = timed(|| {
        let music = BeatSet::new(vec![10, 20, 30, 40], 20.0).unwrap();
        let perfect = beat_alignment_score(&music, &music, 3.0).unwrap();
        let shifted = BeatSet::new(vec![13, 23, 33, 43], 20.0).unwrap();
        let offset = beat_alignment_score(&music, &shifted, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = features(&mut rng, 500, &[0.0; 6]);
        let own = frechet_distance(&set, &set).unwrap();
        let v = [3.0, 0.0, 4.0];
        let a = features(&mut rng, 10_000, &[0.0; 3]);
        let b = features(&mut rng, 10_000, &v);
        let shift = frechet_distance(&a, &b).unwrap();
        let shift_err = (shift - 25.0).abs() / 25.0;
        let pass = (perfect - 1.0).abs() <= 1e-12
            && (offset - (-0.5f64).exp()).abs() <= 1e-12
            && own <= 1e-6
            && shift_err <= 0.01;
        (
            pass,
            format!(
                "BAS perfect {perfect}, offset-3 {offset:.15} vs exp(-0.5); FID self {own:.1e}, mean shift {shift:.4} vs 25 ({:.2}%)",
                100.0 * shift_err
            ),
        )
    });
    Line {
        id: 4,
        title: "metric oracles",
        pass,
        detail,
        secs,
        limit: 30.0,
    }
}

fn kept_rows_equal(out: &Mat, seed: &Mat, mask: &FrameMask) -> bool {
    (0..mask.len()).filter(|&i| mask.is_kept(i)).all(|i| {
        out.row(i)
            .iter()
            .zip(seed.row(i))
            .all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

fn editing(data: &Dataset, samples: &[TrainSample]) -> Line {
    let ((pass, detail), secs) = timed(|| {
        let channels = data.skeleton.channels();
        let untrained = DenoiserModel::new(micro_config(channels, ConditioningConfig::None), 3).unwrap();
        let mut cfg = TrainConfig::dance();
        cfg.batch_size = 4;
        cfg.max_steps = 30;
        let mut trainer = Trainer::new(untrained.clone(), cfg, NoiseSchedule::standard(), data.skeleton.clone()).unwrap();
        let plain: Vec<TrainSample> = samples
            .iter()
            .map(|s| TrainSample {
                motion: s.motion.clone(),
                condition: Conditioning::None,
            })
            .collect();
        train(&mut trainer, &plain, None, &CheckpointMeta::default()).unwrap();
        let sched = NoiseSchedule::standard();
        let seed = data.items[0].motion.frames();
        let n = seed.rows();
        let masks = [
            ("prefix", FrameMask::prefix(n, 40).unwrap()),
            ("keyframes", FrameMask::keyframes(n, &[0, 17, 45, n - 1]).unwrap()),
        ];
        let mut all = true;
        let mut parts = Vec::new();
        for (label, model) in [("untrained", &untrained), ("trained", &trainer.model)] {
            for (kind, mask) in &masks {
                let out = masked_sample(model, None, seed, mask, &sched, 11).unwrap();
                let ok = kept_rows_equal(&out, seed, mask);
                all &= ok;
                parts.push(format!("{label}/{kind} {}", if ok { "exact" } else { "MISMATCH" }));
            }
        }
        (all, parts.join(", "))
    });
    Line {
        id: 5,
        title: "editing exactness",
        pass,
        detail,
        secs,
        limit: 30.0,
    }
}

struct Trained {
    trainer: Trainer,
    data_losses: Vec<f64>,
    secs: f64,
}

fn train_model(samples: &[TrainSample], data: &Dataset, losses: LossWeights) -> Trained {
    let mut cfg = TrainConfig::dance();
    cfg.batch_size = 8;
    cfg.learning_rate = 2e-3;
    cfg.max_steps = 2000;
    cfg.checkpoint_every = 0;
    cfg.losses = losses;
    cfg.model = small_hyper();
    let model_cfg = cfg.model.model_config(
        data.skeleton.channels(),
        ConditioningConfig::Audio {
            mel_bands: MelConfig::default().bands,
        },
    );
    let model = DenoiserModel::new(model_cfg, cfg.rng_seed).unwrap();
    let mut trainer = Trainer::new(model, cfg, NoiseSchedule::standard(), data.skeleton.clone()).unwrap();
    let (outcome, secs) = timed(|| train(&mut trainer, samples, None, &CheckpointMeta::default()).unwrap());
    Trained {
        trainer,
        data_losses: outcome.reports.iter().map(|r| r.loss.data).collect(),
        secs,
    }
}

const SAMPLE_SEEDS: u64 = 10;

/// One 80-frame sample per seed, conditioned on dataset item `seed mod n`.
/// Sampling is clamped to the training data range, as the CLI does.
fn draw_samples(model: &DenoiserModel, samples: &[TrainSample], fps: f64) -> Vec<MotionSequence> {
    let sched = NoiseSchedule::standard();
    let range = data_range(samples);
    let clamped = ClampedPredictor { inner: model, range: &range, sched: &sched };
    (0..SAMPLE_SEEDS)
        .map(|s| {
            let item = &samples[s as usize % samples.len()];
            let ctx = model.context(&item.condition).unwrap();
            let m = sample(&clamped, ctx.as_ref(), item.motion.shape(), &sched, 1000 + s).unwrap();
            MotionSequence::new(m, fps).unwrap()
        })
        .collect()
}

fn data_range(samples: &[TrainSample]) -> MotionRange {
    MotionRange::of(samples.iter().map(|s| &s.motion)).unwrap()
}

fn noise_motions(samples: &[TrainSample], fps: f64) -> Vec<MotionSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (0..SAMPLE_SEEDS as usize)
        .map(|s| {
            let (r, c) = samples[s % samples.len()].motion.shape();
            MotionSequence::new(normal(&mut rng, r, c, 1.0), fps).unwrap()
        })
        .collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_bas(motions: &[MotionSequence], data: &Dataset) -> f64 {
    let cfg = MelConfig::default();
    mean(motions.iter().enumerate().map(|(s, m)| {
        let item = &data.items[s % data.items.len()];
        motion_bas(m, &data.mel(item, &cfg).unwrap()).unwrap()
    }))
}

fn overfit(full: &Trained, full_samples: &[MotionSequence], noise: &[MotionSequence], sample_secs: f64, data: &Dataset) -> Line {
    let l = &full.data_losses;
    let early = mean(l[..10].iter().copied());
    let late = mean(l[l.len() - 100..].iter().copied());
    let skel = &data.skeleton;
    let gen = mean(full_samples.iter().map(|m| loss_skeleton(m.frames(), skel).unwrap()));
    let raw = mean(noise.iter().map(|m| loss_skeleton(m.frames(), skel).unwrap()));
    Line {
        id: 6,
        title: "overfit smoke test",
        pass: late <= 0.1 * early && gen * 10.0 <= raw,
        detail: format!(
            "L_da first-10 mean {early:.4}, last-100 mean {late:.4} ({:.1}%); skeleton loss samples {gen:.2e} vs noise {raw:.2e} ({:.0}x)",
            100.0 * late / early,
            raw / gen
        ),
        secs: full.secs + sample_secs,
        limit: 900.0,
    }
}

fn main() {
    let mut lines = Vec::new();
    let mut emit = |line: Line| {
        report(&line);
        lines.push(line.pass && line.secs < line.limit);
    };
    emit(diffusion_algebra());
    emit(schedule());
    emit(gradients());
    emit(metric_oracles());

    let dir = tempfile::tempdir().unwrap();
    gen_data(&SyntheticSpec::default(), dir.path(), 0).unwrap();
    let data = Dataset::load(dir.path()).unwrap();
    let vocab = data.vocabulary();
    let samples = data.training_samples(Task::Dance, &MelConfig::default(), &vocab).unwrap();
    let fps = data.fps();
    emit(editing(&data, &samples));

    let full = train_model(&samples, &data, LossWeights::default());
    let (full_samples, full_sample_secs) = timed(|| draw_samples(&full.trainer.model, &samples, fps));
    let noise = noise_motions(&samples, fps);
    emit(overfit(&full, &full_samples, &noise, full_sample_secs, &data));

    let (da_samples, da_secs) = timed(|| {
        let da = train_model(&samples, &data, LossWeights::data_only());
        draw_samples(&da.trainer.model, &samples, fps)
    });
    let (bas, bas_secs) = timed(|| {
        (
            mean_bas(&full_samples, &data),
            mean_bas(&da_samples, &data),
            mean_bas(&noise, &data),
        )
    });
    let (b_full, b_da, b_noise) = bas;
    let skel_mean = |ms: &[MotionSequence]| mean(ms.iter().map(|m| loss_skeleton(m.frames(), &data.skeleton).unwrap()));
    emit(Line {
        id: 7,
        title: "kinematic-loss trend",
        pass: b_full >= b_da && b_da > b_noise && b_full > b_noise,
        detail: format!(
            "BAS over {SAMPLE_SEEDS} seeds: all losses {b_full:.4}, L_da only {b_da:.4}, noise {b_noise:.4}; skeleton loss all losses {:.2e}, L_da only {:.2e}",
            skel_mean(&full_samples),
            skel_mean(&da_samples)
        ),
        secs: full.secs + full_sample_secs + da_secs + bas_secs,
        limit: 2700.0,
    });

    let ((mm_a, mm_b), mm_secs) = timed(|| {
        let model = &full.trainer.model;
        let ctx = model.context(&samples[0].condition).unwrap();
        let sched = NoiseSchedule::standard();
        let range = data_range(&samples);
        let clamped = ClampedPredictor { inner: model, range: &range, sched: &sched };
        let shape = samples[0].motion.shape();
        let run = |seeds: Vec<u64>| multi_modality(&clamped, ctx.as_ref(), shape, fps, &sched, &seeds).unwrap();
        (run((100..110).collect()), run((200..210).collect()))
    });
    let spread = (mm_a - mm_b).abs() / (0.5 * (mm_a + mm_b));
    emit(Line {
        id: 8,
        title: "multi-modality positivity",
        pass: mm_a > 0.0 && mm_b > 0.0 && spread <= 0.2,
        detail: format!("K=10 seed sets: {mm_a:.4} and {mm_b:.4} (spread {:.1}%)", 100.0 * spread),
        secs: mm_secs,
        limit: 600.0,
    });

    let ((rows, ctx_rows), mel_secs) = timed(|| {
        let tone: Vec<f64> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let mel = mel_spectrogram(&Waveform::new(tone, 16000.0).unwrap(), &MelConfig::default()).unwrap();
        let model = DenoiserModel::new(
            micro_config(24, ConditioningConfig::Audio { mel_bands: 80 }),
            0,
        )
        .unwrap();
        let rows = mel.frame_count();
        let ctx = model.context(&Conditioning::Audio(mel)).unwrap().unwrap();
        (rows, ctx.rows().rows())
    });
    emit(Line {
        id: 9,
        title: "Mel contract",
        pass: rows == 32 && ctx_rows == 32,
        detail: format!("1 s at 16 kHz -> {rows} Mel frames, {ctx_rows} context rows (want 32)"),
        secs: mel_secs,
        limit: 1.0,
    });

    let passed = lines.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    if passed != lines.len() && std::env::args().any(|a| a == "--strict") {
        std::process::exit(1);
    }
}
